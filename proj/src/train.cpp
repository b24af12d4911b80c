#include "ftn/train.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>

#include <nlohmann/json.hpp>

namespace ftn {

TrainIndex TrainIndex::build(const Dataset& ds) {
  TrainIndex idx;
  idx.ids = ds.train_ids();
  idx.rows_by_class.resize(idx.ids.size());
  for (size_t row = 0; row < ds.records.size(); ++row) {
    if (ds.records[row].split != "train") continue;
    const auto it =
        std::lower_bound(idx.ids.begin(), idx.ids.end(), ds.records[row].id);
    idx.rows_by_class[static_cast<size_t>(it - idx.ids.begin())].push_back(
        static_cast<int>(row));
  }
  return idx;
}

namespace {

template <typename T>
void erase_patch(std::vector<T>& img, int H, int W, Rng& rng) {
  const int plane = H * W;
  const double area_frac = rng.uniform(0.02, 0.20);
  const double aspect = rng.uniform(0.3, 1.0 / 0.3);
  const double area = area_frac * plane;
  int eh = std::max(1, static_cast<int>(std::lround(std::sqrt(area * aspect))));
  int ew = std::max(1, static_cast<int>(std::lround(std::sqrt(area / aspect))));
  eh = std::min(eh, H);
  ew = std::min(ew, W);
  const int y0 = rng.uniform_int(H - eh + 1);
  const int x0 = rng.uniform_int(W - ew + 1);
  for (int c = 0; c < 3; ++c)
    for (int y = y0; y < y0 + eh; ++y)
      for (int x = x0; x < x0 + ew; ++x)
        img[static_cast<size_t>(c) * plane + y * W + x] = T(0.5);
}

}  // namespace

template <typename T>
Batch<T> pk_sampler(const Dataset& ds, const TrainIndex& index, int E, int M,
                    Rng& rng) {
  if (index.num_classes() < E)
    throw Error("pk_sampler: fewer train identities than ids_per_batch");
  if (E < 2 || M < 2)
    throw Error("pk_sampler: the triplet loss needs E >= 2 and M >= 2");

  // E distinct classes without replacement.
  std::vector<int> classes(static_cast<size_t>(index.num_classes()));
  for (size_t i = 0; i < classes.size(); ++i) classes[i] = static_cast<int>(i);
  for (int i = 0; i < E; ++i) {
    const int j = i + rng.uniform_int(static_cast<int>(classes.size()) - i);
    std::swap(classes[static_cast<size_t>(i)], classes[static_cast<size_t>(j)]);
  }

  const int plane = ds.height * ds.width;
  const int img_len = 3 * plane;
  Batch<T> batch;
  std::vector<T> data(static_cast<size_t>(E) * M * img_len);
  for (int e = 0; e < E; ++e) {
    const int cls = classes[static_cast<size_t>(e)];
    const auto& rows = index.rows_by_class[static_cast<size_t>(cls)];
    // Without replacement when the identity has >= M rows, else with.
    std::vector<int> pick;
    if (static_cast<int>(rows.size()) >= M) {
      std::vector<int> pool = rows;
      for (int m = 0; m < M; ++m) {
        const int j = m + rng.uniform_int(static_cast<int>(pool.size()) - m);
        std::swap(pool[static_cast<size_t>(m)], pool[static_cast<size_t>(j)]);
        pick.push_back(pool[static_cast<size_t>(m)]);
      }
    } else {
      for (int m = 0; m < M; ++m)
        pick.push_back(rows[static_cast<size_t>(
            rng.uniform_int(static_cast<int>(rows.size())))]);
    }
    for (int m = 0; m < M; ++m) {
      const int row = pick[static_cast<size_t>(m)];
      std::vector<T> img(ds.images[static_cast<size_t>(row)].begin(),
                         ds.images[static_cast<size_t>(row)].end());
      if (rng.bernoulli(0.5)) {  // horizontal flip
        for (int c = 0; c < 3; ++c)
          for (int y = 0; y < ds.height; ++y) {
            T* p = img.data() + static_cast<size_t>(c) * plane + y * ds.width;
            std::reverse(p, p + ds.width);
          }
      }
      if (rng.bernoulli(0.5)) erase_patch(img, ds.height, ds.width, rng);
      std::copy(img.begin(), img.end(),
                data.begin() + (static_cast<size_t>(e) * M + m) * img_len);
      batch.labels.push_back(cls);
      batch.cams.push_back(ds.records[static_cast<size_t>(row)].cam);
    }
  }
  batch.images = Tensor<T>::from_data(
      {static_cast<idx>(E) * M, 3, ds.height, ds.width}, std::move(data));
  return batch;
}

namespace {

// 2-D embeddings concatenated along the feature axis, keeping the graph.
template <typename T>
Tensor<T> concat_embeddings(const std::vector<Tensor<T>>& embs) {
  Tensor<T> out;
  for (const auto& e : embs) {
    Tensor<T> e4 = reshape(e, {e.dim(0), e.dim(1), 1, 1});
    out = out.defined() ? concat_channels(out, e4) : e4;
  }
  return reshape(out, {out.dim(0), out.dim(1)});
}

template <typename T>
std::vector<Param<T>*> warmup_filter(FtnModel<T>& model,
                                     std::vector<Param<T>*> params,
                                     bool in_warmup) {
  if (!in_warmup) return params;
  std::vector<Param<T>*> out;
  for (auto* p : params)
    if (FtnModel<T>::is_classifier_param(p->name) ||
        FtnModel<T>::is_cfa_param(p->name))
      out.push_back(p);
  return out;
}

}  // namespace

template <typename T>
StepResult<T> train_step(FtnModel<T>& model, const Batch<T>& batch,
                         std::int64_t gbi, const TrainSchedule& sched,
                         ReconStrategy strategy) {
  if (strategy == ReconStrategy::NoCfaGmOnly && model.config().with_cfa)
    throw Error("train_step: strategy (a) expects a model without CFA");
  if (strategy_uses_cfa_masks(strategy) && !model.config().with_cfa)
    throw Error("train_step: strategy needs CFA attention masks");

  StepResult<T> res;
  res.phase = sched.phase(gbi);
  res.lr = sched.lr_at_epoch(sched.epoch_of(gbi));
  const bool warmup = sched.in_warmup(gbi);

  model.zero_grad();
  AdamConfig adam;
  adam.lr = res.lr;

  if (!sched.is_recon_phase(gbi)) {
    auto out = model.forward_reid(batch.images, /*training=*/true);
    Tensor<T> ce;
    for (const auto& logits : out.logits) {
      Tensor<T> part = cross_entropy(logits, batch.labels);
      ce = ce.defined() ? add(ce, part) : part;
    }
    Tensor<T> triplet;
    const T margin = static_cast<T>(sched.triplet_margin);
    if (sched.triplet_per_branch) {
      for (const auto& e : out.embeddings) {
        Tensor<T> part = hard_triplet(e, batch.labels, margin);
        triplet = triplet.defined() ? add(triplet, part) : part;
      }
      triplet = scale(triplet, T(1) / static_cast<T>(out.embeddings.size()));
    } else {
      triplet = hard_triplet(concat_embeddings(out.embeddings), batch.labels,
                             margin);
    }
    LossParts<T> parts;
    parts.ce = ce;
    parts.triplet = triplet;
    Tensor<T> total = total_loss(parts, sched.weights_for(gbi));
    total.backward();
    adam_step(warmup_filter(model, model.reid_params(), warmup), adam);
    res.loss = static_cast<double>(total.item());
  } else {
    auto out = model.forward_recon(batch.images, /*training=*/true);
    Tensor<T> target = build_target(batch.images, strategy, out.masks);
    LossWeights w = sched.weights_for(gbi);
    if (!strategy_uses_gradient_loss(strategy)) w.gradient = 0.0;
    LossParts<T> parts;
    if (w.gradient != 0.0) parts.gradient = gradient_loss(out.recon, target);
    if (w.l1 != 0.0) parts.l1 = l1_loss(out.recon, target);
    Tensor<T> total = total_loss(parts, w);
    total.backward();
    adam_step(warmup_filter(model, model.recon_params(), warmup), adam);
    res.loss = static_cast<double>(total.item());
  }
  return res;
}

template <typename T>
TrainRunResult train_model(FtnModel<T>& model, const Dataset& ds,
                           TrainSchedule sched, ReconStrategy strategy,
                           std::uint64_t seed, std::ostream* log) {
  TrainIndex index = TrainIndex::build(ds);
  if (index.num_classes() != model.config().num_classes)
    throw Error("train_model: model classifier size does not match the train identities");
  if (sched.no_decoder && model.config().with_decoder)
    throw Error("train_model: no_decoder schedule on a model with a decoder");
  if (!sched.no_decoder && !model.config().with_decoder)
    throw Error("train_model: model without decoder needs a no_decoder schedule");

  sched.batches_per_epoch =
      std::max(1, static_cast<int>(ds.train_indices().size()) /
                      std::max(1, sched.ids_per_batch * sched.imgs_per_id));
  const std::int64_t total_steps =
      sched.max_steps > 0
          ? sched.max_steps
          : static_cast<std::int64_t>(sched.epochs) * sched.batches_per_epoch;

  Rng rng(seed);
  TrainRunResult result;
  bool first_reid_seen = false;
  for (std::int64_t gbi = 0; gbi < total_steps; ++gbi) {
    Batch<T> batch = pk_sampler<T>(ds, index, sched.ids_per_batch,
                                   sched.imgs_per_id, rng);
    StepResult<T> r = train_step(model, batch, gbi, sched, strategy);
    if (r.phase != sched.group_size - 1 || sched.no_decoder) {
      if (!first_reid_seen) {
        result.first_reid_loss = r.loss;
        first_reid_seen = true;
      }
      result.last_reid_loss = r.loss;
    }
    if (log) {
      nlohmann::json j;
      j["step"] = gbi;
      j["phase"] = r.phase;
      j["loss"] = r.loss;
      j["lr"] = r.lr;
      (*log) << j.dump() << "\n";
    }
    ++result.steps;
  }
  return result;
}

template <typename T>
std::vector<EmbRow> embed_dataset(FtnModel<T>& model, const Dataset& ds,
                                  const std::vector<int>& rows, int chunk) {
  std::vector<EmbRow> out;
  const int plane = ds.height * ds.width;
  const int img_len = 3 * plane;
  for (size_t start = 0; start < rows.size();
       start += static_cast<size_t>(chunk)) {
    const size_t n = std::min(static_cast<size_t>(chunk), rows.size() - start);
    std::vector<T> data(n * static_cast<size_t>(img_len));
    for (size_t i = 0; i < n; ++i) {
      const auto& img = ds.images[static_cast<size_t>(rows[start + i])];
      std::copy(img.begin(), img.end(), data.begin() + i * img_len);
    }
    Tensor<T> images = Tensor<T>::from_data(
        {static_cast<idx>(n), 3, ds.height, ds.width}, std::move(data));
    Tensor<T> emb = model.embed(images);
    const idx dim = emb.dim(1);
    for (size_t i = 0; i < n; ++i) {
      EmbRow row;
      row.emb.assign(emb.data().begin() + static_cast<idx>(i) * dim,
                     emb.data().begin() + static_cast<idx>(i + 1) * dim);
      row.id = ds.records[static_cast<size_t>(rows[start + i])].id;
      row.cam = ds.records[static_cast<size_t>(rows[start + i])].cam;
      out.push_back(std::move(row));
    }
  }
  return out;
}

EvalSplit eval_split(const Dataset& ds) {
  EvalSplit split;
  split.query_rows = ds.indices_with_split("query");
  split.gallery_rows = ds.indices_with_split("gallery");
  if (!split.query_rows.empty()) return split;
  // Overfit manifests carry only train rows: first image per identity
  // queries, the rest form the gallery.
  std::set<int> seen;
  for (size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    if (seen.insert(r.id).second)
      split.query_rows.push_back(static_cast<int>(i));
    else
      split.gallery_rows.push_back(static_cast<int>(i));
  }
  return split;
}

#define FTN_INSTANTIATE_TRAIN(T)                                           \
  template Batch<T> pk_sampler<T>(const Dataset&, const TrainIndex&, int,  \
                                  int, Rng&);                              \
  template StepResult<T> train_step<T>(FtnModel<T>&, const Batch<T>&,      \
                                       std::int64_t, const TrainSchedule&, \
                                       ReconStrategy);                     \
  template TrainRunResult train_model<T>(FtnModel<T>&, const Dataset&,     \
                                         TrainSchedule, ReconStrategy,     \
                                         std::uint64_t, std::ostream*);    \
  template std::vector<EmbRow> embed_dataset<T>(FtnModel<T>&,              \
                                                const Dataset&,            \
                                                const std::vector<int>&,   \
                                                int);

FTN_INSTANTIATE_TRAIN(float)
FTN_INSTANTIATE_TRAIN(double)

}  // namespace ftn
