#include "ftn/eval.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "ftn/tensor.hpp"

namespace ftn {

namespace {
std::vector<double> maybe_normalize(const std::vector<double>& v, bool on) {
  if (!on) return v;
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n == 0.0) return v;
  std::vector<double> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}
}  // namespace

RetrievalResult evaluate(const std::vector<EmbRow>& queries,
                         const std::vector<EmbRow>& gallery, int max_rank,
                         bool l2_normalize, std::vector<QueryDetail>* details) {
  if (queries.empty()) throw Error("evaluate: no queries");
  if (gallery.empty()) throw Error("evaluate: empty gallery");
  const size_t dim = queries[0].emb.size();
  for (const auto& r : queries)
    if (r.emb.size() != dim) throw Error("evaluate: query dim mismatch");
  for (const auto& r : gallery)
    if (r.emb.size() != dim) throw Error("evaluate: gallery dim mismatch");
  if (max_rank < 1) throw Error("evaluate: max_rank must be >= 1");

  std::vector<std::vector<double>> gemb(gallery.size());
  for (size_t g = 0; g < gallery.size(); ++g)
    gemb[g] = maybe_normalize(gallery[g].emb, l2_normalize);

  std::vector<QueryDetail> local(queries.size());
  // Queries are independent read-only work items, safe to parallelise.
#pragma omp parallel for schedule(static)
  for (std::int64_t qi = 0; qi < static_cast<std::int64_t>(queries.size());
       ++qi) {
    const EmbRow& q = queries[static_cast<size_t>(qi)];
    const std::vector<double> qe = maybe_normalize(q.emb, l2_normalize);
    // (distance, gallery index); index is the deterministic tie-break.
    std::vector<std::pair<double, int>> order;
    order.reserve(gallery.size());
    for (size_t g = 0; g < gallery.size(); ++g) {
      const EmbRow& row = gallery[g];
      if (row.id == q.id && row.cam == q.cam) continue;  // junk
      double d2 = 0;
      for (size_t k = 0; k < dim; ++k) {
        const double d = qe[k] - gemb[g][k];
        d2 += d * d;
      }
      order.emplace_back(std::sqrt(d2), static_cast<int>(g));
    }
    std::sort(order.begin(), order.end());

    QueryDetail det;
    int hits = 0;
    double ap = 0.0;
    for (size_t r = 0; r < order.size(); ++r) {
      if (gallery[static_cast<size_t>(order[r].second)].id != q.id) continue;
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(r + 1);
      if (hits == 1) det.first_correct_rank = static_cast<int>(r + 1);
    }
    if (hits > 0) {
      det.valid = true;
      det.ap = ap / hits;
    }
    local[static_cast<size_t>(qi)] = det;
  }

  RetrievalResult res;
  res.cmc.assign(static_cast<size_t>(max_rank), 0.0);
  double map_sum = 0.0;
  int valid = 0;
  for (const auto& det : local) {
    if (!det.valid) continue;
    ++valid;
    map_sum += det.ap;
    for (int r = det.first_correct_rank; r <= max_rank; ++r)
      res.cmc[static_cast<size_t>(r - 1)] += 1.0;
  }
  if (valid == 0)
    throw Error("evaluate: every query lost its gallery to junk filtering");
  for (auto& v : res.cmc) v /= valid;
  res.map = map_sum / valid;
  res.num_valid_queries = valid;
  if (details) *details = std::move(local);
  return res;
}

double ap_oracle(const std::vector<bool>& relevance) {
  int total = 0;
  for (bool r : relevance)
    if (r) ++total;
  if (total == 0) throw Error("ap_oracle: no relevant item in the ranking");
  int hits = 0;
  double acc = 0.0;
  for (size_t i = 0; i < relevance.size(); ++i) {
    if (!relevance[i]) continue;
    ++hits;
    acc += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return acc / total;
}

std::string retrieval_to_json(const RetrievalResult& r) {
  nlohmann::json j;
  j["cmc"] = r.cmc;
  j["map"] = r.map;
  j["num_valid_queries"] = r.num_valid_queries;
  return j.dump();
}

}  // namespace ftn
