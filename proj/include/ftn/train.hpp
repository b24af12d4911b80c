#pragma once

#include <iosfwd>
#include <vector>

#include "ftn/data.hpp"
#include "ftn/eval.hpp"
#include "ftn/losses.hpp"
#include "ftn/masks.hpp"
#include "ftn/model.hpp"

namespace ftn {

// Alternating three-batch schedule: the first two batches of every group
// train the Re-ID losses, the third trains the reconstruction losses.
// During warm-up epochs only classifiers and the attention module update.
struct TrainSchedule {
  int warmup_epochs = 3;
  int group_size = 3;
  LossWeights reid_weights{1.0, 0.1, 0.0, 0.0};
  LossWeights recon_weights{0.0, 0.0, 1.0, 1.0};
  double lr0 = 3.5e-4;
  std::vector<int> lr_milestones;  // epochs where lr multiplies by lr_decay
  double lr_decay = 0.1;
  int ids_per_batch = 4;  // E
  int imgs_per_id = 4;    // M
  int epochs = 50;
  int max_steps = 0;  // 0: run epochs * batches_per_epoch steps
  int batches_per_epoch = 1;
  double triplet_margin = 0.3;
  bool triplet_per_branch = false;
  // Disables the decoder/reconstruction arm entirely: every batch becomes a
  // Re-ID batch (the no-reconstruction baseline).
  bool no_decoder = false;

  int phase(std::int64_t gbi) const {
    return no_decoder ? 0 : static_cast<int>(gbi % group_size);
  }
  bool is_recon_phase(std::int64_t gbi) const {
    return phase(gbi) == group_size - 1;
  }
  LossWeights weights_for(std::int64_t gbi) const {
    return is_recon_phase(gbi) ? recon_weights : reid_weights;
  }
  int epoch_of(std::int64_t gbi) const {
    return static_cast<int>(gbi / std::max(1, batches_per_epoch));
  }
  bool in_warmup(std::int64_t gbi) const {
    return epoch_of(gbi) < warmup_epochs;
  }
  double lr_at_epoch(int epoch) const {
    double lr = lr0;
    for (int m : lr_milestones)
      if (epoch >= m) lr *= lr_decay;
    return lr;
  }
};

// Sorted train identities and their dataset rows; CE classes index this list.
struct TrainIndex {
  std::vector<int> ids;
  std::vector<std::vector<int>> rows_by_class;
  static TrainIndex build(const Dataset& ds);
  int num_classes() const { return static_cast<int>(ids.size()); }
};

template <typename T>
struct Batch {
  Tensor<T> images;         // [E*M, 3, H, W]
  std::vector<int> labels;  // class indices
  std::vector<int> cams;
};

// E identities x M instances, sampled deterministically from rng, augmented
// with random horizontal flip (p=0.5) and random erasing (p=0.5, area 2-20%,
// fill 0.5). Identities with fewer than M rows are sampled with replacement.
template <typename T>
Batch<T> pk_sampler(const Dataset& ds, const TrainIndex& index, int E, int M,
                    Rng& rng);

template <typename T>
struct StepResult {
  double loss = 0;
  int phase = 0;
  double lr = 0;
};

// One optimisation step at the given global batch index. Re-ID phases sum
// the per-branch CE losses and add the hard triplet on the concatenated
// embedding; the recon phase builds the strategy's mask-weighted target and
// applies gradient + L1 losses through the decoder into stages 1-4.
template <typename T>
StepResult<T> train_step(FtnModel<T>& model, const Batch<T>& batch,
                         std::int64_t global_batch_index,
                         const TrainSchedule& sched, ReconStrategy strategy);

struct TrainRunResult {
  int steps = 0;
  double first_reid_loss = 0;
  double last_reid_loss = 0;
};

// Full deterministic training loop; log (optional) receives one JSON line
// per step: {"step":..,"phase":..,"loss":..,"lr":..}.
template <typename T>
TrainRunResult train_model(FtnModel<T>& model, const Dataset& ds,
                           TrainSchedule sched, ReconStrategy strategy,
                           std::uint64_t seed, std::ostream* log);

// Eval-mode embeddings for the given dataset rows, processed in chunks.
template <typename T>
std::vector<EmbRow> embed_dataset(FtnModel<T>& model, const Dataset& ds,
                                  const std::vector<int>& rows,
                                  int chunk = 16);

// Query/gallery rows for retrieval: the manifest's query/gallery splits when
// present, otherwise each identity's first image queries the rest.
struct EvalSplit {
  std::vector<int> query_rows, gallery_rows;
};
EvalSplit eval_split(const Dataset& ds);

}  // namespace ftn
