#include "msnas/proxy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "msnas/rng.hpp"

namespace msnas {

namespace {

constexpr double kTau = 6.283185307179586;

void validate_proxy_config(const ProxyConfig& cfg) {
  if (cfg.num_classes < 6) throw Error("proxy: need >= 6 classes for top-5 accuracy");
  if (cfg.motion_periods.empty()) throw Error("proxy: motion_periods must be non-empty");
  if (cfg.num_classes % static_cast<int>(cfg.motion_periods.size()) != 0)
    throw Error("proxy: num_classes must be a multiple of the motion period count");
  if (cfg.clips_per_class < 2) throw Error("proxy: need at least 2 clips per class");
  if (cfg.spatial < 8 || cfg.frames < 2) throw Error("proxy: degenerate dims");
  for (int p : cfg.motion_periods)
    if (p < 2 || p > cfg.frames) throw Error("proxy: motion period must lie in [2, frames]");
  if (cfg.val_fraction <= 0.0 || cfg.val_fraction >= 1.0)
    throw Error("proxy: val_fraction must lie in (0,1)");
}

}  // namespace

Dataset generate_dataset(const ProxyConfig& cfg) {
  validate_proxy_config(cfg);
  Dataset ds;
  ds.cfg = cfg;
  Rng rng(cfg.seed);

  const int T = cfg.frames, S = cfg.spatial;
  const int ca = cfg.channels_appearance, cm = cfg.channels_motion;
  const int groups = cfg.num_classes / static_cast<int>(cfg.motion_periods.size());
  const double wavelength = static_cast<double>(S) / 4.0;
  const double sigma = static_cast<double>(S) / 5.0;

  for (int label = 0; label < cfg.num_classes; ++label) {
    const int group = label / static_cast<int>(cfg.motion_periods.size());
    const int period = cfg.motion_periods[static_cast<size_t>(
        label % static_cast<int>(cfg.motion_periods.size()))];
    const double angle = 3.141592653589793 * static_cast<double>(group) / groups;
    const double ks = kTau / wavelength;
    const double ky = ks * std::sin(angle), kx = ks * std::cos(angle);

    for (int clip_idx = 0; clip_idx < cfg.clips_per_class; ++clip_idx) {
      Clip clip;
      clip.label = label;
      clip.appearance.resize(static_cast<size_t>(T) * S * S * ca);
      clip.motion.resize(static_cast<size_t>(T) * S * S * cm);

      // Static oriented grating, constant over time up to per-frame noise.
      // The phase is a class property: groups stay linearly separable, so
      // appearance is the easy floor and motion carries the headroom.
      const double phase = 0.35 * group;
      std::vector<double> amp(static_cast<size_t>(ca));
      for (auto& a : amp) a = 0.8 + 0.4 * rng.uniform();
      std::vector<double> pattern(static_cast<size_t>(S) * S);
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x)
          pattern[static_cast<size_t>(y * S + x)] = std::cos(ky * y + kx * x + phase);

      // Localized field oscillating at the class period; the spatial bump
      // is clip-specific so motion alone carries no appearance signal.
      const double cy = (0.2 + 0.6 * rng.uniform()) * S;
      const double cx = (0.2 + 0.6 * rng.uniform()) * S;
      const double motion_phase = rng.uniform() * kTau;
      std::vector<double> bump(static_cast<size_t>(S) * S);
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
          const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          bump[static_cast<size_t>(y * S + x)] = std::exp(-d2 / (2.0 * sigma * sigma));
        }

      for (int t = 0; t < T; ++t) {
        const double osc = kTau * static_cast<double>(t) / period + motion_phase;
        const double mc = std::cos(osc), ms = std::sin(osc);
        for (int y = 0; y < S; ++y)
          for (int x = 0; x < S; ++x) {
            const size_t p = static_cast<size_t>(y * S + x);
            const size_t abase = ((static_cast<size_t>(t) * S + y) * S + x) * ca;
            for (int c = 0; c < ca; ++c)
              clip.appearance[abase + c] = static_cast<real>(
                  amp[static_cast<size_t>(c)] * pattern[p] + cfg.appearance_noise * rng.normal());
            const size_t mbase = ((static_cast<size_t>(t) * S + y) * S + x) * cm;
            for (int c = 0; c < cm; ++c) {
              const double carrier = c % 2 == 0 ? mc : ms;
              clip.motion[mbase + c] =
                  static_cast<real>(bump[p] * carrier + cfg.motion_noise * rng.normal());
            }
          }
      }
      ds.clips.push_back(std::move(clip));
    }
  }

  // Fixed split: the trailing fraction of every class goes to validation.
  const int val_per_class = std::max(
      1, static_cast<int>(std::lround(cfg.val_fraction * cfg.clips_per_class)));
  for (int label = 0; label < cfg.num_classes; ++label)
    for (int i = 0; i < cfg.clips_per_class; ++i) {
      const int id = label * cfg.clips_per_class + i;
      if (i >= cfg.clips_per_class - val_per_class) ds.val_indices.push_back(id);
      else ds.train_indices.push_back(id);
    }
  return ds;
}

Dataset::Batch Dataset::gather(const std::vector<int>& clip_ids) const {
  const int B = static_cast<int>(clip_ids.size());
  const int T = cfg.frames, S = cfg.spatial;
  Batch batch;
  std::vector<real> app(static_cast<size_t>(B) * T * S * S * cfg.channels_appearance);
  std::vector<real> mot(static_cast<size_t>(B) * T * S * S * cfg.channels_motion);
  for (int b = 0; b < B; ++b) {
    const Clip& clip = clips.at(static_cast<size_t>(clip_ids[static_cast<size_t>(b)]));
    std::memcpy(app.data() + static_cast<size_t>(b) * clip.appearance.size(),
                clip.appearance.data(), clip.appearance.size() * sizeof(real));
    std::memcpy(mot.data() + static_cast<size_t>(b) * clip.motion.size(), clip.motion.data(),
                clip.motion.size() * sizeof(real));
    batch.labels.push_back(clip.label);
  }
  batch.appearance =
      Tensor::from({B, T, S, S, cfg.channels_appearance}, std::move(app));
  batch.motion = Tensor::from({B, T, S, S, cfg.channels_motion}, std::move(mot));
  return batch;
}

// --- dataset file format -------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'S', 'N', 'A', 'S', 'D', 'S', '1'};

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
void read_pod(std::ifstream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw IoError("dataset file truncated");
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write(kMagic, sizeof kMagic);
  write_pod(os, int32_t{1});
  write_pod(os, static_cast<int32_t>(ds.cfg.num_classes));
  write_pod(os, static_cast<int32_t>(ds.cfg.clips_per_class));
  write_pod(os, static_cast<int32_t>(ds.cfg.frames));
  write_pod(os, static_cast<int32_t>(ds.cfg.spatial));
  write_pod(os, static_cast<int32_t>(ds.cfg.channels_appearance));
  write_pod(os, static_cast<int32_t>(ds.cfg.channels_motion));
  write_pod(os, static_cast<int32_t>(ds.cfg.motion_periods.size()));
  for (int p : ds.cfg.motion_periods) write_pod(os, static_cast<int32_t>(p));
  write_pod(os, ds.cfg.val_fraction);
  write_pod(os, ds.cfg.appearance_noise);
  write_pod(os, ds.cfg.motion_noise);
  write_pod(os, static_cast<uint64_t>(ds.cfg.seed));
  write_pod(os, static_cast<int64_t>(ds.clips.size()));
  for (const auto& clip : ds.clips) {
    write_pod(os, static_cast<int32_t>(clip.label));
    for (real v : clip.appearance) write_pod(os, static_cast<double>(v));
    for (real v : clip.motion) write_pod(os, static_cast<double>(v));
  }
  if (!os) throw IoError("failed writing " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw IoError("not a dataset file: " + path);
  int32_t version;
  read_pod(is, version);
  if (version != 1) throw IoError("unsupported dataset version " + std::to_string(version));
  ProxyConfig cfg;
  int32_t v;
  read_pod(is, v); cfg.num_classes = v;
  read_pod(is, v); cfg.clips_per_class = v;
  read_pod(is, v); cfg.frames = v;
  read_pod(is, v); cfg.spatial = v;
  read_pod(is, v); cfg.channels_appearance = v;
  read_pod(is, v); cfg.channels_motion = v;
  int32_t periods;
  read_pod(is, periods);
  cfg.motion_periods.clear();
  for (int i = 0; i < periods; ++i) {
    read_pod(is, v);
    cfg.motion_periods.push_back(v);
  }
  read_pod(is, cfg.val_fraction);
  read_pod(is, cfg.appearance_noise);
  read_pod(is, cfg.motion_noise);
  uint64_t seed;
  read_pod(is, seed);
  cfg.seed = seed;

  int64_t count;
  read_pod(is, count);
  Dataset ds;
  ds.cfg = cfg;
  const size_t app_len = static_cast<size_t>(cfg.frames) * cfg.spatial * cfg.spatial *
                         cfg.channels_appearance;
  const size_t mot_len =
      static_cast<size_t>(cfg.frames) * cfg.spatial * cfg.spatial * cfg.channels_motion;
  for (int64_t i = 0; i < count; ++i) {
    Clip clip;
    int32_t label;
    read_pod(is, label);
    clip.label = label;
    clip.appearance.resize(app_len);
    clip.motion.resize(mot_len);
    for (auto& x : clip.appearance) {
      double tmp;
      read_pod(is, tmp);
      x = static_cast<real>(tmp);
    }
    for (auto& x : clip.motion) {
      double tmp;
      read_pod(is, tmp);
      x = static_cast<real>(tmp);
    }
    ds.clips.push_back(std::move(clip));
  }
  const int val_per_class = std::max(
      1, static_cast<int>(std::lround(cfg.val_fraction * cfg.clips_per_class)));
  for (int label = 0; label < cfg.num_classes; ++label)
    for (int i = 0; i < cfg.clips_per_class; ++i) {
      const int id = label * cfg.clips_per_class + i;
      if (i >= cfg.clips_per_class - val_per_class) ds.val_indices.push_back(id);
      else ds.train_indices.push_back(id);
    }
  return ds;
}

// --- training ----------------------------------------------------------------

double lr_schedule(int step, const TrainerConfig& cfg) {
  if (step < 0) throw Error("lr_schedule: negative step");
  const int warmup = cfg.warmup >= 0 ? cfg.warmup : std::max(1, cfg.iterations / 20);
  if (warmup > cfg.iterations) throw Error("lr_schedule: warmup exceeds iterations");
  if (step < warmup) return cfg.lr * static_cast<double>(step) / warmup;
  const int span = std::max(1, cfg.iterations - warmup);
  const double progress = static_cast<double>(step - warmup) / span;
  return 0.5 * cfg.lr * (1.0 + std::cos(3.141592653589793 * std::min(progress, 1.0)));
}

TrainResult train(ExecutableNetwork& net, const Dataset& ds, const TrainerConfig& cfg) {
  TrainResult result;
  result.gates = net.edge_logits();
  if (cfg.iterations == 0) return result;
  if (static_cast<int>(ds.train_indices.size()) < cfg.batch)
    throw Error("train: fewer training clips than the batch size");

  auto& params = net.parameters();
  std::vector<std::vector<real>> velocity(params.size());
  for (size_t i = 0; i < params.size(); ++i)
    velocity[i].assign(params[i].values().size(), real{0});

  Rng rng(cfg.seed);
  std::vector<int> order = ds.train_indices;
  size_t cursor = order.size();  // force an initial shuffle

  for (int step = 0; step < cfg.iterations; ++step) {
    std::vector<int> batch_ids;
    batch_ids.reserve(static_cast<size_t>(cfg.batch));
    while (static_cast<int>(batch_ids.size()) < cfg.batch) {
      if (cursor == order.size()) {
        for (size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1],
                    order[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
        cursor = 0;
      }
      batch_ids.push_back(order[cursor++]);
    }

    const auto batch = ds.gather(batch_ids);
    double loss_value = 0.0;
    try {
      Tensor loss = net.loss(batch.appearance, batch.motion, batch.labels,
                             cfg.label_smoothing, true);
      loss_value = static_cast<double>(loss.values()[0]);
      for (auto& p : params) p.zero_grad();
      loss.backward();
    } catch (const NumericError& e) {
      throw NumericError(std::string("train: aborted at step ") + std::to_string(step) + ": " +
                             e.what(),
                         step);
    }
    if (step == 0) result.initial_loss = loss_value;
    result.final_loss = loss_value;

    const real lr = static_cast<real>(lr_schedule(step, cfg));
    const real mu = static_cast<real>(cfg.momentum);
    const real wd = static_cast<real>(cfg.weight_decay);
    for (size_t i = 0; i < params.size(); ++i) {
      auto& w = params[i].values_mut();
      const auto& g = params[i].grad();
      auto& v = velocity[i];
      // Gate logits are the only scalar parameters in the store.
      const real step_lr =
          w.size() == 1 ? lr * static_cast<real>(cfg.gate_lr_multiplier) : lr;
      for (size_t j = 0; j < w.size(); ++j) {
        v[j] = mu * v[j] + g[j] + wd * w[j];
        w[j] -= step_lr * v[j];
      }
    }
    ++result.steps;
  }
  result.gates = net.edge_logits();
  return result;
}

EvalResult evaluate_on(ExecutableNetwork& net, const Dataset& ds, const std::vector<int>& ids) {
  if (ids.empty()) throw Error("evaluate: empty index list");
  const int K = net.num_classes();
  long hits1 = 0, hits5 = 0;
  const int chunk = 16;
  for (size_t start = 0; start < ids.size(); start += chunk) {
    const std::vector<int> part(ids.begin() + static_cast<long>(start),
                                ids.begin() + static_cast<long>(
                                                  std::min(ids.size(), start + chunk)));
    const auto batch = ds.gather(part);
    const Tensor logits = net.forward(batch.appearance, batch.motion, false);
    const auto& v = logits.values();
    for (size_t b = 0; b < part.size(); ++b) {
      const real* row = v.data() + b * static_cast<size_t>(K);
      const int label = batch.labels[b];
      int rank = 0;
      for (int k = 0; k < K; ++k) {
        if (row[k] > row[label]) ++rank;
        else if (row[k] == row[label] && k < label) ++rank;
      }
      if (rank < 1) ++hits1;
      if (rank < 5) ++hits5;
    }
  }
  EvalResult r;
  r.top1 = static_cast<double>(hits1) / static_cast<double>(ids.size());
  r.top5 = static_cast<double>(hits5) / static_cast<double>(ids.size());
  return r;
}

EvalResult evaluate(ExecutableNetwork& net, const Dataset& ds) {
  return evaluate_on(net, ds, ds.val_indices);
}

}  // namespace msnas
