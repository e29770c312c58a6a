#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "ressenet/arch.hpp"
#include "ressenet/checkpoint.hpp"
#include "ressenet/common.hpp"
#include "ressenet/data.hpp"
#include "ressenet/ops.hpp"
#include "ressenet/tape.hpp"

namespace ressenet::train {

// The training protocol in one struct: step-indexed schedule, Nesterov-free
// momentum, decay applied to every trainable tensor.
struct SGDConfig {
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 128;
  std::vector<std::int64_t> milestones = {32000, 48000};
  std::int64_t max_iters = 64000;
};

// Tenfold drop at each milestone, boundary iteration included.
inline double lr_at(const SGDConfig& c, std::int64_t iter) {
  double lr = c.lr0;
  for (auto m : c.milestones)
    if (iter >= m) lr /= 10.0;
  return lr;
}

// v <- momentum*v + (g + wd*p); p <- p - lr*v. An empty gradient reads as
// zero. Rejects non-finite gradients before writing anything.
template <typename T>
void sgd_update_tensor(Tensor<T>& p, Tensor<T>& v, double lr, double momentum,
                       double wd, const std::string& name, std::int64_t iter) {
  if (!p.grad.empty()) {
    for (const T& g : p.grad) {
      if (!std::isfinite(static_cast<double>(g)))
        throw NumericError("non-finite gradient in '" + name +
                           "' at iteration " + std::to_string(iter));
    }
  }
  const T lr_t = static_cast<T>(lr);
  const T mom_t = static_cast<T>(momentum);
  const T wd_t = static_cast<T>(wd);
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const T g = p.grad.empty() ? T(0) : p.grad[i];
    const T gp = g + wd_t * p.data[i];
    v.data[i] = mom_t * v.data[i] + gp;
    p.data[i] -= lr_t * v.data[i];
  }
}

// Momentum SGD over a model's parameter registry. Velocities are keyed by
// registry name so they can ride along in checkpoints. A step validates every
// gradient before the first write: a fault leaves the model untouched.
template <typename T>
class SGD {
public:
  SGD(arch::ModelGraph<T>& model, SGDConfig cfg)
      : cfg_(std::move(cfg)), params_(&model.named.params) {
    vel_.reserve(params_->size());
    for (const auto& [name, p] : *params_)
      vel_.emplace_back(name, zeros<T>(p->shape));
  }

  const SGDConfig& config() const { return cfg_; }
  std::vector<std::pair<std::string, TensorPtr<T>>>& velocity() { return vel_; }
  const std::vector<std::pair<std::string, TensorPtr<T>>>& velocity() const {
    return vel_;
  }

  void step(std::int64_t iter) {
    for (const auto& [name, p] : *params_) {
      for (const T& g : p->grad) {
        if (!std::isfinite(static_cast<double>(g)))
          throw NumericError("non-finite gradient in '" + name +
                             "' at iteration " + std::to_string(iter));
      }
    }
    const double lr = lr_at(cfg_, iter);
    for (std::size_t k = 0; k < params_->size(); ++k)
      sgd_update_tensor(*(*params_)[k].second, *vel_[k].second, lr,
                        cfg_.momentum, cfg_.weight_decay, (*params_)[k].first,
                        iter);
  }

private:
  SGDConfig cfg_;
  std::vector<std::pair<std::string, TensorPtr<T>>>* params_;  // borrowed
  std::vector<std::pair<std::string, TensorPtr<T>>> vel_;
};

// Number of classes ranked strictly ahead of `label`. Equal logits at a lower
// class index count as ahead, so ties resolve to the lower index.
template <typename T>
int rank_of(const T* row, int K, int label) {
  int r = 0;
  for (int j = 0; j < K; ++j)
    if (row[j] > row[label] || (row[j] == row[label] && j < label)) ++r;
  return r;
}

struct EvalMetrics {
  double loss = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  std::int64_t count = 0;
};

namespace detail {

template <typename T>
TensorPtr<T> cast_batch(const TensorPtr<float>& x) {
  if constexpr (std::is_same_v<T, float>) {
    return x;
  } else {
    auto out = zeros<T>(x->shape);
    for (std::size_t i = 0; i < x->data.size(); ++i)
      out->data[i] = static_cast<T>(x->data[i]);
    return out;
  }
}

}  // namespace detail

// Sequential pass over the first `limit` samples (all when negative) in eval
// mode. Loss is the sample-weighted mean so the batch split cannot move it.
template <typename T>
EvalMetrics evaluate(const arch::ModelGraph<T>& model, const data::Dataset& ds,
                     const data::NormStats& st, std::int64_t batch_size,
                     std::int64_t limit = -1) {
  const std::int64_t n = limit < 0 ? ds.size() : std::min(limit, ds.size());
  if (n <= 0) throw ConfigError("evaluate needs at least one sample");
  const int K = model.config.num_classes;
  const int k5 = std::min(5, K);
  std::int64_t t1 = 0, t5 = 0;
  double loss_sum = 0.0;
  for (const auto& [start, len] : data::batch_ranges(n, batch_size)) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(len));
    std::iota(idx.begin(), idx.end(), start);
    auto b = data::make_eval_batch(ds, idx, st);
    auto logits = model.forward(nullptr, detail::cast_batch<T>(b.images),
                                Mode::Eval);
    for (std::int64_t i = 0; i < len; ++i) {
      const T* row = logits->data.data() + i * K;
      const int r = rank_of(row, K, b.labels[static_cast<std::size_t>(i)]);
      if (r == 0) ++t1;
      if (r < k5) ++t5;
    }
    auto l = ops::softmax_cross_entropy<T>(nullptr, logits, b.labels);
    loss_sum += static_cast<double>(l->data[0]) * static_cast<double>(len);
  }
  EvalMetrics m;
  m.loss = loss_sum / static_cast<double>(n);
  m.top1 = static_cast<double>(t1) / static_cast<double>(n);
  m.top5 = static_cast<double>(t5) / static_cast<double>(n);
  m.count = n;
  return m;
}

struct EvalPoint {
  std::int64_t iter = -1;
  double loss = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
};

struct LoopConfig {
  std::uint64_t seed = 1;
  std::int64_t budget = -1;       // < 0: run to the optimizer's max_iters
  std::int64_t eval_every = 2000; // 0: evaluate only at the end
  std::int64_t eval_batch = 100;
  std::int64_t eval_limit = -1;   // cap on evaluated samples
  std::string out_dir;            // artifacts written here when non-empty
  bool verbose = false;
};

struct TrainResult {
  std::vector<double> losses;      // one per completed update
  std::vector<EvalPoint> evals;    // cadence evaluations
  EvalPoint final_metrics{};       // at end_iter; iter = -1 if never evaluated
  EvalPoint best{};                // highest top1 seen; ties to the earlier iter
  std::int64_t end_iter = 0;
};

// One CSV row per update: "iter,loss,top1,top5" with the eval columns filled
// only on rows where an evaluation ran. Full double precision throughout.
inline void emit_curves(const std::string& path,
                        const std::vector<double>& losses,
                        const std::vector<EvalPoint>& evals,
                        std::int64_t start_iter = 0) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write curve file " + path);
  std::map<std::int64_t, const EvalPoint*> by_iter;
  for (const auto& e : evals) by_iter[e.iter] = &e;
  os << "iter,loss,top1,top5\n";
  char buf[160];
  for (std::size_t k = 0; k < losses.size(); ++k) {
    const std::int64_t iter = start_iter + static_cast<std::int64_t>(k) + 1;
    std::snprintf(buf, sizeof buf, "%lld,%.17g,",
                  static_cast<long long>(iter), losses[k]);
    os << buf;
    if (auto it = by_iter.find(iter); it != by_iter.end()) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g", it->second->top1,
                    it->second->top5);
      os << buf;
    } else {
      os << ',';
    }
    os << '\n';
  }
  if (!os) throw IoError("failed writing curve file " + path);
}

// Model + optimizer state in one file, resumable bit for bit: parameters,
// BN running stats, momentum buffers, and the iteration count.
template <typename T>
Checkpoint make_checkpoint(const arch::ModelGraph<T>& model, const SGD<T>& opt,
                           std::int64_t iter) {
  Checkpoint ck = snapshot_model(model);
  ck.manifest["iteration"] = iter;
  for (const auto& [name, v] : opt.velocity()) {
    std::vector<float> data(v->data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      data[i] = static_cast<float>(v->data[i]);
    ck.arrays.emplace_back("momentum/" + name,
                           make_tensor<float>(v->shape, std::move(data)));
  }
  return ck;
}

// Restores model tensors and momentum buffers; missing momentum arrays reset
// to zero so parameter-only checkpoints still load. Returns the iteration.
template <typename T>
std::int64_t restore_checkpoint(arch::ModelGraph<T>& model, SGD<T>& opt,
                                const Checkpoint& ck) {
  fill_from_checkpoint(model, ck);
  for (auto& [name, v] : opt.velocity()) {
    if (const TensorPtr<float>* src = ck.find("momentum/" + name)) {
      if ((*src)->shape != v->shape)
        throw FormatError("checkpoint momentum '" + name + "' has shape " +
                          shape_str((*src)->shape) + ", optimizer expects " +
                          shape_str(v->shape));
      for (std::size_t i = 0; i < v->data.size(); ++i)
        v->data[i] = static_cast<T>((*src)->data[i]);
    } else {
      std::fill(v->data.begin(), v->data.end(), T(0));
    }
  }
  return ck.manifest.value("iteration", std::int64_t{0});
}

// The iteration-indexed loop. The sample at global iteration i is a pure
// function of (seed, i): epoch = i / batches_per_epoch selects the shuffle,
// the batch position selects the slice, and augmentation keys off the sample
// index. Resuming from a checkpoint therefore replays the original stream.
template <typename T>
TrainResult train_loop(arch::ModelGraph<T>& model, SGD<T>& opt,
                       const data::Dataset& train_set,
                       const data::Dataset* eval_set,
                       const data::NormStats& st, const LoopConfig& lc,
                       std::int64_t start_iter = 0) {
  namespace fs = std::filesystem;
  const SGDConfig& sc = opt.config();
  const std::int64_t budget = lc.budget < 0 ? sc.max_iters : lc.budget;
  TrainResult res;
  res.end_iter = std::max(start_iter, budget);

  const auto ranges = data::batch_ranges(train_set.size(), sc.batch_size);
  if (start_iter < budget && ranges.empty())
    throw ConfigError("cannot train on an empty dataset");
  const auto bpe = static_cast<std::int64_t>(ranges.size());

  std::int64_t cached_epoch = -1;
  std::vector<std::int64_t> perm;

  const auto run_eval = [&](std::int64_t at) {
    EvalMetrics em = evaluate(model, *eval_set, st, lc.eval_batch, lc.eval_limit);
    return EvalPoint{at, em.loss, em.top1, em.top5};
  };

  for (std::int64_t iter = start_iter; iter < budget; ++iter) {
    const std::int64_t epoch = iter / bpe;
    const std::int64_t pos = iter % bpe;
    if (epoch != cached_epoch) {
      perm = data::shuffled_indices(train_set.size(),
                                    lc.seed, static_cast<std::uint64_t>(epoch));
      cached_epoch = epoch;
    }
    const auto [off, len] = ranges[static_cast<std::size_t>(pos)];
    std::vector<std::int64_t> idx(perm.begin() + off, perm.begin() + off + len);
    auto batch = data::make_train_batch(train_set, idx,
                                        static_cast<std::uint64_t>(epoch),
                                        lc.seed, st);
    try {
      Tape<T> tape;
      auto logits = model.forward(&tape, detail::cast_batch<T>(batch.images),
                                  Mode::Train);
      auto loss = ops::softmax_cross_entropy(&tape, logits, batch.labels);
      const double lval = static_cast<double>(loss->data[0]);
      if (!std::isfinite(lval))
        throw NumericError("non-finite training loss at iteration " +
                           std::to_string(iter));
      for (auto& [name, p] : model.named.params) {
        p->ensure_grad();
        p->zero_grad();
      }
      tape.backward(loss);
      opt.step(iter);
      res.losses.push_back(lval);
    } catch (const NumericError& e) {
      // The faulting update never landed; park the last good state.
      if (!lc.out_dir.empty())
        save_checkpoint((fs::path(lc.out_dir) /
                         ("ckpt-abort-" + std::to_string(iter) + ".bin"))
                            .string(),
                        make_checkpoint(model, opt, iter));
      const std::string what = e.what();
      if (what.find("iteration") == std::string::npos)
        throw NumericError(what + " at iteration " + std::to_string(iter));
      throw;
    }

    const std::int64_t done = iter + 1;
    if (eval_set && lc.eval_every > 0 && done % lc.eval_every == 0) {
      res.evals.push_back(run_eval(done));
      if (lc.verbose) {
        const auto& e = res.evals.back();
        std::printf("iter %lld  train-loss %.4f  top1 %.4f  top5 %.4f\n",
                    static_cast<long long>(done), res.losses.back(), e.top1,
                    e.top5);
        std::fflush(stdout);
      }
    } else if (lc.verbose && done % 100 == 0) {
      std::printf("iter %lld  train-loss %.4f\n", static_cast<long long>(done),
                  res.losses.back());
      std::fflush(stdout);
    }
    if (!lc.out_dir.empty() &&
        std::find(sc.milestones.begin(), sc.milestones.end(), done) !=
            sc.milestones.end()) {
      save_checkpoint(
          (fs::path(lc.out_dir) / ("ckpt-" + std::to_string(done) + ".bin"))
              .string(),
          make_checkpoint(model, opt, done));
    }
  }

  if (eval_set) {
    if (!res.evals.empty() && res.evals.back().iter == res.end_iter) {
      res.final_metrics = res.evals.back();
    } else {
      res.final_metrics = run_eval(res.end_iter);
    }
    res.best = res.final_metrics;
    for (const auto& e : res.evals)
      if (e.top1 > res.best.top1 ||
          (e.top1 == res.best.top1 && e.iter < res.best.iter))
        res.best = e;
  }

  if (!lc.out_dir.empty()) {
    save_checkpoint((fs::path(lc.out_dir) / "ckpt-final.bin").string(),
                    make_checkpoint(model, opt, res.end_iter));
    emit_curves((fs::path(lc.out_dir) / "curve.csv").string(), res.losses,
                res.evals, start_iter);
  }
  return res;
}

}  // namespace ressenet::train
