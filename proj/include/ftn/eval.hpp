#pragma once

#include <string>
#include <vector>

namespace ftn {

struct EmbRow {
  std::vector<double> emb;
  int id = 0;
  int cam = 0;
};

struct RetrievalResult {
  std::vector<double> cmc;  // ranks 1..R, non-decreasing, in [0,1]
  double map = 0.0;
  int num_valid_queries = 0;
};

struct QueryDetail {
  bool valid = false;
  double ap = 0.0;
  int first_correct_rank = 0;  // 1-based, 0 if none
};

// Ranks the gallery per query by ascending Euclidean distance (ties broken
// by gallery index), drops junk rows (same id AND same cam as the query),
// and reports CMC plus mAP over queries that keep at least one positive.
// Queries without a valid positive are skipped.
RetrievalResult evaluate(const std::vector<EmbRow>& queries,
                         const std::vector<EmbRow>& gallery, int max_rank,
                         bool l2_normalize = false,
                         std::vector<QueryDetail>* details = nullptr);

// Brute-force average precision over a relevance-ordered ranking; the
// reference evaluate() must agree with.
double ap_oracle(const std::vector<bool>& relevance);

std::string retrieval_to_json(const RetrievalResult& r);

}  // namespace ftn
