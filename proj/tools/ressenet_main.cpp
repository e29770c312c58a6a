// Command-line driver: train / eval / params / gradcheck over the Res-SE-Net
// family. Every run is deterministic under --seed; all failures exit nonzero
// with a single-line "error[category]: ..." on stderr.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ressenet/arch.hpp"
#include "ressenet/checkpoint.hpp"
#include "ressenet/common.hpp"
#include "ressenet/data.hpp"
#include "ressenet/gradcheck.hpp"
#include "ressenet/nn.hpp"
#include "ressenet/ops.hpp"
#include "ressenet/train.hpp"

namespace {

using namespace ressenet;
namespace fs = std::filesystem;

int exit_code_for(const std::string& category) {
  if (category == "config") return 2;
  if (category == "shape" || category == "numeric") return 3;
  if (category == "format") return 4;
  if (category == "io") return 5;
  return 1;
}

std::string variant_list() {
  std::string out;
  for (arch::ArchVariant v : arch::all_variants()) {
    if (!out.empty()) out += ", ";
    out += arch::variant_token(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// dataset plumbing

std::string resolve_root(std::string root) {
  if (root.empty()) {
    if (const char* env = std::getenv("RESSENET_DATA")) root = env;
  }
  if (root.empty())
    throw ConfigError(
        "dataset root not set: pass --data-root or set RESSENET_DATA");
  return root;
}

// Accepts either the directory holding the binary files directly or a root
// containing the directory the official tarball unpacks to.
std::string dataset_dir(const std::string& root, bool cifar100) {
  const char* probe_file = cifar100 ? "train.bin" : "data_batch_1.bin";
  const char* subdir = cifar100 ? "cifar-100-binary" : "cifar-10-batches-bin";
  if (fs::exists(fs::path(root) / probe_file)) return root;
  if (fs::exists(fs::path(root) / subdir / probe_file))
    return (fs::path(root) / subdir).string();
  throw IoError(std::string("no ") + (cifar100 ? "CIFAR-100" : "CIFAR-10") +
                " files under " + root + ": expected " +
                (cifar100 ? "train.bin and test.bin"
                          : "data_batch_1.bin..data_batch_5.bin and "
                            "test_batch.bin") +
                " there or in a " + subdir + "/ subdirectory");
}

struct LoadedData {
  data::DatasetPair sets;
  data::NormStats stats;
};

LoadedData load_data(const std::string& name, const std::string& root_flag,
                     const std::string& stats_cache_dir) {
  const bool c100 = name == "cifar100";
  const std::string dir = dataset_dir(resolve_root(root_flag), c100);
  LoadedData ld;
  ld.sets = c100 ? data::load_cifar100(dir) : data::load_cifar10(dir);
  if (!stats_cache_dir.empty()) {
    ld.stats = data::ensure_norm_stats(
        ld.sets.train,
        (fs::path(stats_cache_dir) / ("norm-stats-" + name + ".txt")).string());
  } else {
    ld.stats = data::compute_norm_stats(ld.sets.train);
  }
  return ld;
}

data::Dataset head_subset(const data::Dataset& ds, std::int64_t n) {
  if (n > ds.size())
    throw ConfigError("--subset " + std::to_string(n) +
                      " exceeds the training set size " +
                      std::to_string(ds.size()));
  data::Dataset out;
  out.num_classes = ds.num_classes;
  out.pixels.assign(ds.pixels.begin(),
                    ds.pixels.begin() + n * data::kImageBytes);
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + n);
  if (!ds.coarse_labels.empty())
    out.coarse_labels.assign(ds.coarse_labels.begin(),
                             ds.coarse_labels.begin() + n);
  return out;
}

void print_metrics(const char* tag, const train::EvalPoint& e) {
  std::printf("%-6s iter %lld  loss %.4f  top1 %.4f  top5 %.4f\n", tag,
              static_cast<long long>(e.iter), e.loss, e.top1, e.top5);
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  std::string variant = "res-se-net";
  int depth = 20;
  int r = 16;
  std::string dataset = "cifar10";
  std::string data_root;
  std::string out = "run";
  std::string resume;
  std::uint64_t seed = 1;
  std::int64_t iters = -1;
  std::int64_t subset = 0;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 128;
  std::vector<std::int64_t> milestones = {32000, 48000};
  std::int64_t eval_every = 2000;
  std::int64_t eval_batch = 100;
  std::int64_t eval_limit = -1;
  bool verbose = false;
};

int cmd_train(const TrainOpts& o) {
  const auto t0 = std::chrono::steady_clock::now();
  arch::ArchConfig cfg;
  cfg.variant = arch::parse_variant(o.variant);
  cfg.depth = o.depth;
  cfg.num_classes = o.dataset == "cifar100" ? 100 : 10;
  cfg.r = o.r;
  cfg.validate();

  fs::create_directories(o.out);
  LoadedData ld = load_data(o.dataset, o.data_root, o.out);
  data::Dataset train_set =
      o.subset > 0 ? head_subset(ld.sets.train, o.subset) : ld.sets.train;
  // With --subset the reported accuracy is train-subset top-1 (the overfit
  // smoke); otherwise it is measured on the test split.
  const data::Dataset& eval_set = o.subset > 0 ? train_set : ld.sets.test;

  Rng rng(o.seed);
  auto model = arch::build<float>(cfg, rng);

  train::SGDConfig sc;
  sc.lr0 = o.lr;
  sc.momentum = o.momentum;
  sc.weight_decay = o.weight_decay;
  sc.batch_size = o.batch_size;
  sc.milestones = o.milestones;
  train::SGD<float> opt(model, sc);

  std::int64_t start_iter = 0;
  if (!o.resume.empty())
    start_iter = train::restore_checkpoint(model, opt, load_checkpoint(o.resume));

  train::LoopConfig lc;
  lc.seed = o.seed;
  lc.budget = o.iters;
  lc.eval_every = o.eval_every;
  lc.eval_batch = o.eval_batch;
  lc.eval_limit = o.eval_limit;
  lc.out_dir = o.out;
  lc.verbose = o.verbose;

  std::printf("training %s depth %d on %s (%lld samples, %lld classes), "
              "iterations %lld..%lld, seed %llu\n",
              o.variant.c_str(), o.depth, o.dataset.c_str(),
              static_cast<long long>(train_set.size()),
              static_cast<long long>(cfg.num_classes),
              static_cast<long long>(start_iter),
              static_cast<long long>(o.iters < 0 ? sc.max_iters : o.iters),
              static_cast<unsigned long long>(o.seed));
  std::fflush(stdout);

  auto res = train::train_loop(model, opt, train_set, &eval_set, ld.stats, lc,
                               start_iter);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  print_metrics("final", res.final_metrics);
  print_metrics("best", res.best);
  std::printf("artifacts: %s/{run.json,curve.csv,ckpt-final.bin}\n",
              o.out.c_str());
  std::printf("wall %.1f s\n", wall);

  nlohmann::json j{
      {"version", RESSENET_VERSION},
      {"seed", o.seed},
      {"variant", o.variant},
      {"depth", o.depth},
      {"classes", cfg.num_classes},
      {"r", o.r},
      {"dataset", o.dataset},
      {"subset", o.subset},
      {"start_iteration", start_iter},
      {"iterations", res.end_iter},
      {"sgd",
       {{"lr0", sc.lr0},
        {"momentum", sc.momentum},
        {"weight_decay", sc.weight_decay},
        {"batch_size", sc.batch_size},
        {"milestones", sc.milestones},
        {"max_iters", sc.max_iters}}},
      {"eval_every", o.eval_every},
      {"wall_seconds", wall},
      {"metrics",
       {{"final",
         {{"iter", res.final_metrics.iter},
          {"loss", res.final_metrics.loss},
          {"top1", res.final_metrics.top1},
          {"top5", res.final_metrics.top5}}},
        {"best",
         {{"iter", res.best.iter},
          {"loss", res.best.loss},
          {"top1", res.best.top1},
          {"top5", res.best.top5}}}}},
      {"artifacts", {{"curve", "curve.csv"}, {"checkpoint", "ckpt-final.bin"}}}};
  std::ofstream js(fs::path(o.out) / "run.json", std::ios::trunc);
  if (!js) throw IoError("cannot write " + o.out + "/run.json");
  js << j.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
  std::string ckpt;
  std::string dataset = "cifar10";
  std::string data_root;
  std::string split = "test";
  std::string variant = "res-se-net";
  int depth = 20;
  int r = 16;
  std::uint64_t seed = 1;
  std::int64_t batch_size = 100;
  std::int64_t limit = -1;
};

int cmd_eval(const EvalOpts& o) {
  LoadedData ld = load_data(o.dataset, o.data_root, "");
  const int want_classes = o.dataset == "cifar100" ? 100 : 10;

  arch::ArchConfig cfg;
  if (!o.ckpt.empty()) {
    Checkpoint ck = load_checkpoint(o.ckpt);
    cfg.variant = arch::parse_variant(
        ck.manifest.value("variant", std::string("baseline")));
    cfg.depth = ck.manifest.value("depth", 0);
    cfg.num_classes = ck.manifest.value("classes", 0);
    cfg.r = ck.manifest.value("r", 16);
    if (cfg.num_classes != want_classes)
      throw FormatError("checkpoint " + o.ckpt + " was trained for " +
                        std::to_string(cfg.num_classes) +
                        " classes but dataset " + o.dataset + " has " +
                        std::to_string(want_classes));
    cfg.validate();
    Rng rng(o.seed);
    auto model = arch::build<float>(cfg, rng);
    fill_from_checkpoint(model, ck);
    const auto& ds = o.split == "train" ? ld.sets.train : ld.sets.test;
    auto m = train::evaluate(model, ds, ld.stats, o.batch_size, o.limit);
    std::printf("checkpoint %s (%s depth %d, iteration %lld)\n", o.ckpt.c_str(),
                arch::variant_token(cfg.variant).c_str(), cfg.depth,
                static_cast<long long>(
                    ck.manifest.value("iteration", std::int64_t{0})));
    std::printf("samples %lld\nloss %.4f\ntop1 %.4f\ntop5 %.4f\n",
                static_cast<long long>(m.count), m.loss, m.top1, m.top5);
    return 0;
  }

  // No checkpoint: evaluate a freshly initialized model (chance level).
  cfg.variant = arch::parse_variant(o.variant);
  cfg.depth = o.depth;
  cfg.num_classes = want_classes;
  cfg.r = o.r;
  cfg.validate();
  Rng rng(o.seed);
  auto model = arch::build<float>(cfg, rng);
  const auto& ds = o.split == "train" ? ld.sets.train : ld.sets.test;
  auto m = train::evaluate(model, ds, ld.stats, o.batch_size, o.limit);
  std::printf("fresh %s depth %d (seed %llu, untrained)\n", o.variant.c_str(),
              o.depth, static_cast<unsigned long long>(o.seed));
  std::printf("samples %lld\nloss %.4f\ntop1 %.4f\ntop5 %.4f\n",
              static_cast<long long>(m.count), m.loss, m.top1, m.top5);
  return 0;
}

// ---------------------------------------------------------------------------
// params

std::pair<std::string, int> parse_variant_depth(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == s.size())
    throw ConfigError("expected VARIANT:DEPTH (e.g. res-se-net:44), got '" + s +
                      "'");
  int depth = 0;
  try {
    depth = std::stoi(s.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("bad depth in '" + s + "'");
  }
  return {s.substr(0, colon), depth};
}

struct ParamsOpts {
  std::string variant = "baseline";
  int depth = 20;
  int classes = 10;
  int r = 16;
  std::vector<std::string> compare;
};

int cmd_params(const ParamsOpts& o) {
  if (!o.compare.empty()) {
    if (o.compare.size() != 2)
      throw ConfigError("--compare takes exactly two VARIANT:DEPTH arguments");
    arch::ArchConfig a, b;
    auto [va, da] = parse_variant_depth(o.compare[0]);
    auto [vb, db] = parse_variant_depth(o.compare[1]);
    a.variant = arch::parse_variant(va);
    a.depth = da;
    b.variant = arch::parse_variant(vb);
    b.depth = db;
    a.num_classes = b.num_classes = o.classes;
    a.r = b.r = o.r;
    a.validate();
    b.validate();
    Rng rng(0);
    const auto ca = arch::build<float>(a, rng).param_count();
    const auto cb = arch::build<float>(b, rng).param_count();
    std::printf("%s: %lld parameters\n", o.compare[0].c_str(),
                static_cast<long long>(ca));
    std::printf("%s: %lld parameters\n", o.compare[1].c_str(),
                static_cast<long long>(cb));
    std::printf("reduction: %.2f%%\n", arch::reduction_report(a, b));
    return 0;
  }
  arch::ArchConfig cfg;
  cfg.variant = arch::parse_variant(o.variant);
  cfg.depth = o.depth;
  cfg.num_classes = o.classes;
  cfg.r = o.r;
  cfg.validate();
  Rng rng(0);
  auto model = arch::build<float>(cfg, rng);
  std::fputs(arch::summary(model).c_str(), stdout);
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradCase {
  std::string name;
  double threshold;
  std::function<double()> run;
};

double weighted_probe_check(
    const std::function<TensorPtr<double>(Tape<double>*)>& fwd,
    std::vector<TensorPtr<double>> inputs, std::uint64_t weight_seed) {
  Rng wr(weight_seed);
  auto wt = randn<double>(fwd(nullptr)->shape, wr);
  auto f = [&](Tape<double>* t) {
    return ops::sum_all(t, ops::mul(t, fwd(t), wt));
  };
  std::vector<GradProbe> probes;
  probes.reserve(inputs.size());
  for (auto& in : inputs) probes.push_back({in, all_coords(*in)});
  return grad_check_probes(f, std::span<const GradProbe>(probes), 1e-5);
}

double block_case(nn::BasicBlock<double>::Options opt, std::int64_t hw,
                  std::uint64_t seed) {
  Rng r(seed);
  auto blk = nn::BasicBlock<double>::create(opt, r);
  auto x = randn<double>({2, opt.c_in, hw, hw}, r, 0.7);
  nn::NamedTensors<double> named;
  blk.collect("b", named);
  std::vector<TensorPtr<double>> inputs = {x};
  for (auto& [name, p] : named.params) inputs.push_back(p);
  return weighted_probe_check(
      [&](Tape<double>* t) { return blk.forward(t, x, Mode::Train); },
      std::move(inputs), seed ^ 0xabcdULL);
}

std::vector<GradCase> gradcheck_cases() {
  using O = nn::BasicBlock<double>::Options;
  std::vector<GradCase> cases;
  auto add = [&](std::string name, double thr, std::function<double()> fn) {
    cases.push_back({std::move(name), thr, std::move(fn)});
  };

  add("conv3x3", 1e-4, [] {
    Rng r(101);
    auto x = randn<double>({2, 3, 6, 6}, r);
    auto w = randn<double>({4, 3, 3, 3}, r, 0.4);
    return weighted_probe_check(
        [&](Tape<double>* t) { return ops::conv2d(t, x, w, 1, 1); }, {x, w},
        11);
  });
  add("conv3x3_s2", 1e-4, [] {
    Rng r(102);
    auto x = randn<double>({1, 3, 7, 7}, r);
    auto w = randn<double>({2, 3, 3, 3}, r, 0.4);
    return weighted_probe_check(
        [&](Tape<double>* t) { return ops::conv2d(t, x, w, 2, 1); }, {x, w},
        12);
  });
  add("conv1x1_s2", 1e-4, [] {
    Rng r(103);
    auto x = randn<double>({1, 4, 6, 6}, r);
    auto w = randn<double>({3, 4, 1, 1}, r, 0.4);
    return weighted_probe_check(
        [&](Tape<double>* t) { return ops::conv2d(t, x, w, 2, 0); }, {x, w},
        13);
  });
  add("relu", 1e-4, [] {
    Rng r(104);
    auto x = randn<double>({2, 3, 4, 4}, r);
    return weighted_probe_check(
        [&](Tape<double>* t) { return ops::relu(t, x); }, {x}, 14);
  });
  add("sigmoid", 1e-4, [] {
    Rng r(105);
    auto x = randn<double>({2, 3, 4, 4}, r, 2.0);
    return weighted_probe_check(
        [&](Tape<double>* t) { return ops::sigmoid(t, x); }, {x}, 15);
  });
  add("global_avg_pool", 1e-4, [] {
    Rng r(106);
    auto x = randn<double>({2, 5, 4, 4}, r);
    return weighted_probe_check(
        [&](Tape<double>* t) { return ops::global_avg_pool(t, x); }, {x}, 16);
  });
  add("avg_pool", 1e-4, [] {
    Rng r(107);
    auto x = randn<double>({1, 3, 8, 8}, r);
    return weighted_probe_check(
        [&](Tape<double>* t) { return ops::avg_pool(t, x, 2); }, {x}, 17);
  });
  add("fully_connected", 1e-4, [] {
    Rng r(108);
    auto x = randn<double>({3, 6}, r);
    auto w = randn<double>({4, 6}, r, 0.5);
    auto b = randn<double>({4}, r, 0.5);
    return weighted_probe_check(
        [&](Tape<double>* t) { return ops::fully_connected(t, x, w, b); },
        {x, w, b}, 18);
  });
  add("batch_norm", 1e-4, [] {
    Rng r(109);
    auto x = randn<double>({2, 3, 4, 4}, r);
    auto gamma = randn<double>({3}, r, 0.5);
    auto beta = randn<double>({3}, r, 0.5);
    auto rm = zeros<double>({3});
    auto rv = ones<double>({3});
    return weighted_probe_check(
        [&](Tape<double>* t) {
          return ops::batch_norm(t, x, gamma, beta, rm, rv, Mode::Train);
        },
        {x, gamma, beta}, 19);
  });
  add("add", 1e-4, [] {
    Rng r(110);
    auto a = randn<double>({2, 3, 2, 2}, r);
    auto b = randn<double>({2, 3, 2, 2}, r);
    return weighted_probe_check(
        [&](Tape<double>* t) { return ops::add(t, a, b); }, {a, b}, 20);
  });
  add("mul", 1e-4, [] {
    Rng r(111);
    auto a = randn<double>({2, 3, 2, 2}, r);
    auto b = randn<double>({2, 3, 2, 2}, r);
    return weighted_probe_check(
        [&](Tape<double>* t) { return ops::mul(t, a, b); }, {a, b}, 21);
  });
  add("scale_channels", 1e-4, [] {
    Rng r(112);
    auto x = randn<double>({2, 4, 3, 3}, r);
    auto s = randn<double>({2, 4, 1, 1}, r, 0.5);
    return weighted_probe_check(
        [&](Tape<double>* t) { return ops::scale_channels(t, x, s); }, {x, s},
        22);
  });
  add("softmax_xent", 1e-4, [] {
    Rng r(113);
    auto logits = randn<double>({3, 5}, r);
    const std::vector<int> labels = {0, 2, 4};
    GradProbe probe{logits, all_coords(*logits)};
    return grad_check_probes(
        [&](Tape<double>* t) {
          return ops::softmax_cross_entropy(t, logits, labels);
        },
        std::span<const GradProbe>(&probe, 1), 1e-5);
  });

  add("block_identity", 1e-4,
      [] { return block_case(O{.c_in = 8, .c_out = 8}, 5, 201); });
  add("block_projection", 1e-4, [] {
    return block_case(O{.c_in = 4,
                        .c_out = 8,
                        .stride = 2,
                        .shortcut = nn::ShortcutKind::Projection},
                      6, 202);
  });
  add("block_bridge_se_after", 1e-4, [] {
    return block_case(O{.c_in = 4,
                        .c_out = 8,
                        .stride = 2,
                        .shortcut = nn::ShortcutKind::Projection,
                        .bridge_se = nn::SEPosition::AfterDownsample,
                        .r = 4},
                      6, 203);
  });
  add("block_bridge_se_before", 1e-4, [] {
    return block_case(O{.c_in = 4,
                        .c_out = 8,
                        .stride = 2,
                        .shortcut = nn::ShortcutKind::Projection,
                        .bridge_se = nn::SEPosition::BeforeDownsample,
                        .r = 4},
                      6, 204);
  });
  add("block_se_residual", 1e-4, [] {
    return block_case(O{.c_in = 8, .c_out = 8, .se_residual = true, .r = 4}, 5,
                      205);
  });
  add("block_se_identity", 1e-4, [] {
    return block_case(O{.c_in = 8, .c_out = 8, .se_identity = true, .r = 4}, 5,
                      206);
  });
  add("block_no_shortcut", 1e-4, [] {
    return block_case(O{.c_in = 4,
                        .c_out = 8,
                        .stride = 2,
                        .shortcut = nn::ShortcutKind::None},
                      6, 207);
  });

  // End to end: depth-20 graph in double precision, probing the input plus a
  // two-coordinate subsample of every parameter tensor. The input must be
  // large enough that the last group's BN still normalizes over a healthy
  // population (20x20 -> 5x5 there); tiny inputs leave near-dead ReLU units
  // whose one-sided kinks defeat finite differences. eps is a decade below
  // the primitive cases because 20 stacked BN layers amplify the third-order
  // curvature term that central differences pick up at O(eps^2).
  add("model_res_se_net_20", 1e-3, [] {
    arch::ArchConfig cfg;
    cfg.depth = 20;
    cfg.variant = arch::ArchVariant::ResSENet;
    Rng rng(301);
    auto model = arch::build<double>(cfg, rng);
    Rng xr(302);
    auto x = randn<double>({2, 3, 20, 20}, xr, 0.7);
    const std::vector<int> labels = {3, 4};
    auto f = [&](Tape<double>* t) {
      return ops::softmax_cross_entropy(t, model.forward(t, x, Mode::Train),
                                        labels);
    };
    std::vector<GradProbe> probes;
    probes.push_back({x, {0, x->data.size() / 2, x->data.size() - 1}});
    for (auto& [name, p] : model.named.params) {
      std::vector<std::size_t> coords = {0};
      if (p->data.size() > 1) coords.push_back(p->data.size() - 1);
      probes.push_back({p, std::move(coords)});
    }
    return grad_check_probes(f, std::span<const GradProbe>(probes), 1e-6);
  });
  return cases;
}

struct GradcheckOpts {
  std::string op;
};

int cmd_gradcheck(const GradcheckOpts& o) {
  auto cases = gradcheck_cases();
  if (!o.op.empty()) {
    std::vector<GradCase> picked;
    for (auto& c : cases)
      if (c.name == o.op) picked.push_back(std::move(c));
    if (picked.empty()) {
      std::string names;
      for (const auto& c : cases) names += (names.empty() ? "" : ", ") + c.name;
      throw ConfigError("unknown gradcheck case '" + o.op + "'; one of: " +
                        names);
    }
    cases = std::move(picked);
  }
  std::vector<std::string> failures;
  for (const auto& c : cases) {
    const double err = c.run();
    const bool ok = err < c.threshold;
    std::printf("gradcheck %-24s max rel err %.3e  (threshold %g)  %s\n",
                c.name.c_str(), err, c.threshold, ok ? "ok" : "FAIL");
    std::fflush(stdout);
    if (!ok) failures.push_back(c.name);
  }
  if (!failures.empty()) {
    std::string names;
    for (const auto& n : failures) names += (names.empty() ? "" : ", ") + n;
    throw NumericError("gradient check failed for: " + names);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Res-SE-Net trainer: CIFAR residual networks with squeeze-and-"
      "excitation on the bridge connections.\n"
      "Variants: " + variant_list() + ".\n"
      "Valid depths follow the 6n+2 family: 20, 32, 44, 56, 110, ...",
      "ressenet"};
  app.set_version_flag("--version", RESSENET_VERSION);
  app.set_config("--config", "", "Read options from an INI file "
                                 "(flags override file values)");
  app.require_subcommand(0, 1);

  const std::vector<std::string> datasets = {"cifar10", "cifar100"};
  const std::vector<std::string> splits = {"test", "train"};

  TrainOpts to;
  auto* t = app.add_subcommand("train", "Train a model and write artifacts "
                                        "(run.json, curve.csv, ckpt-*.bin)");
  t->add_option("--variant", to.variant, "Architecture variant: " + variant_list())
      ->capture_default_str();
  t->add_option("--depth", to.depth, "Network depth, 6n+2 (20, 32, 44, 56, 110, ...)")
      ->capture_default_str();
  t->add_option("--r", to.r, "SE reduction ratio")->capture_default_str();
  t->add_option("--dataset", to.dataset, "Dataset")
      ->check(CLI::IsMember(datasets))
      ->capture_default_str();
  t->add_option("--data-root", to.data_root,
                "Directory with the CIFAR binaries (default: $RESSENET_DATA)");
  t->add_option("--out", to.out, "Output directory")->capture_default_str();
  t->add_option("--resume", to.resume, "Checkpoint to resume from");
  t->add_option("--seed", to.seed, "Master seed")->capture_default_str();
  t->add_option("--iters", to.iters,
                "Iteration budget (default: the protocol's 64000)");
  t->add_option("--subset", to.subset,
                "Train on the first N samples and report train-subset accuracy");
  t->add_option("--lr", to.lr, "Initial learning rate")->capture_default_str();
  t->add_option("--momentum", to.momentum, "Momentum")->capture_default_str();
  t->add_option("--weight-decay", to.weight_decay, "L2 penalty")
      ->capture_default_str();
  t->add_option("--batch-size", to.batch_size, "Training batch size")
      ->capture_default_str();
  t->add_option("--milestones", to.milestones,
                "Iterations with a tenfold learning-rate drop")
      ->delimiter(',')
      ->capture_default_str();
  t->add_option("--eval-every", to.eval_every,
                "Evaluation cadence in iterations (0: only at the end)")
      ->capture_default_str();
  t->add_option("--eval-batch", to.eval_batch, "Evaluation batch size")
      ->capture_default_str();
  t->add_option("--eval-limit", to.eval_limit,
                "Evaluate at most this many samples (-1: all)");
  t->add_flag("--verbose", to.verbose, "Progress lines during training");

  EvalOpts eo;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint (or a fresh "
                                       "model) on a dataset split");
  e->add_option("--ckpt", eo.ckpt, "Checkpoint file; omit for a fresh model");
  e->add_option("--dataset", eo.dataset, "Dataset")
      ->check(CLI::IsMember(datasets))
      ->capture_default_str();
  e->add_option("--data-root", eo.data_root,
                "Directory with the CIFAR binaries (default: $RESSENET_DATA)");
  e->add_option("--split", eo.split, "Split to evaluate")
      ->check(CLI::IsMember(splits))
      ->capture_default_str();
  e->add_option("--variant", eo.variant, "Variant for a fresh model")
      ->capture_default_str();
  e->add_option("--depth", eo.depth, "Depth for a fresh model")
      ->capture_default_str();
  e->add_option("--r", eo.r, "SE reduction ratio for a fresh model")
      ->capture_default_str();
  e->add_option("--seed", eo.seed, "Init seed for a fresh model")
      ->capture_default_str();
  e->add_option("--batch-size", eo.batch_size, "Evaluation batch size")
      ->capture_default_str();
  e->add_option("--limit", eo.limit, "Evaluate at most this many samples");

  ParamsOpts po;
  auto* p = app.add_subcommand("params", "Print a per-layer parameter table, "
                                         "or compare two configurations");
  p->add_option("--variant", po.variant, "Architecture variant: " + variant_list())
      ->capture_default_str();
  p->add_option("--depth", po.depth, "Network depth")->capture_default_str();
  p->add_option("--classes", po.classes, "Classifier width")
      ->check(CLI::IsMember(std::vector<int>{10, 100}))
      ->capture_default_str();
  p->add_option("--r", po.r, "SE reduction ratio")->capture_default_str();
  p->add_option("--compare", po.compare,
                "Two VARIANT:DEPTH forms, e.g. --compare res-se-net:44 "
                "baseline:110; prints the parameter reduction")
      ->expected(2);

  GradcheckOpts go;
  auto* g = app.add_subcommand(
      "gradcheck", "Finite-difference verification of every primitive, every "
                   "block variant, and an end-to-end depth-20 model");
  g->add_option("--op", go.op, "Run a single named case");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    return app.exit(h);
  } catch (const CLI::CallForVersion& v) {
    return app.exit(v);
  } catch (const CLI::ParseError& pe) {
    std::cerr << "error[config]: " << pe.what() << "\n";
    return 2;
  }

  try {
    if (t->parsed()) return cmd_train(to);
    if (e->parsed()) return cmd_eval(eo);
    if (p->parsed()) return cmd_params(po);
    if (g->parsed()) return cmd_gradcheck(go);
    std::cout << app.help();
    return 2;
  } catch (const Error& err) {
    std::cerr << "error[" << err.category() << "]: " << err.what() << "\n";
    return exit_code_for(err.category());
  } catch (const std::exception& ex) {
    std::cerr << "error[internal]: " << ex.what() << "\n";
    return 1;
  }
}
