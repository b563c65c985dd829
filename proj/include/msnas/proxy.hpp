#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "msnas/builder.hpp"
#include "msnas/tensor.hpp"

namespace msnas {

// Synthetic two-modality classification task. A class is a (static
// appearance pattern, motion oscillation period) pair: appearance alone
// identifies the pattern group, the motion field's temporal frequency
// separates classes inside a group, and the periods straddle the temporal
// dilation set so resolution choices matter.
struct ProxyConfig {
  int num_classes = 12;  // must be a multiple of motion_periods.size()
  int clips_per_class = 30;
  int frames = 16;
  int spatial = 16;
  int channels_appearance = 2;
  int channels_motion = 2;
  std::vector<int> motion_periods{2, 4, 8};
  double val_fraction = 0.2;
  double appearance_noise = 0.25;
  double motion_noise = 0.05;
  uint64_t seed = 7;
};

struct Clip {
  std::vector<real> appearance;  // [T,Y,X,Ca]
  std::vector<real> motion;      // [T,Y,X,Cm]
  int label = 0;
};

struct Dataset {
  ProxyConfig cfg;
  std::vector<Clip> clips;
  std::vector<int> train_indices;
  std::vector<int> val_indices;

  int appearance_groups() const {
    return cfg.num_classes / static_cast<int>(cfg.motion_periods.size());
  }

  struct Batch {
    Tensor appearance;  // [B,T,Y,X,Ca]
    Tensor motion;
    std::vector<int> labels;
  };
  Batch gather(const std::vector<int>& clip_ids) const;
};

Dataset generate_dataset(const ProxyConfig& cfg);

// Flat binary dataset file with a self-describing header.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

struct TrainerConfig {
  int iterations = 300;
  int batch = 8;
  double lr = 0.05;
  int warmup = -1;  // negative: 5% of iterations
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double label_smoothing = 0.2;
  // Extra factor on the edge-gate logit updates; the short desk-scale
  // proxy training needs stronger gate movement for the learned weights
  // to carry a useful selection signal.
  double gate_lr_multiplier = 8.0;
  uint64_t seed = 1;
};

// Linear warmup to the base rate, then cosine decay to zero at the final
// iteration.
double lr_schedule(int step, const TrainerConfig& cfg);

struct TrainResult {
  int steps = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::map<std::pair<NodeId, NodeId>, double> gates;  // learned edge logits
};

// Momentum SGD on the train split with weight decay and label smoothing.
// Aborts with NumericError (carrying the step index) on divergence.
TrainResult train(ExecutableNetwork& net, const Dataset& ds, const TrainerConfig& cfg);

struct EvalResult {
  double top1 = 0.0;
  double top5 = 0.0;
};

EvalResult evaluate_on(ExecutableNetwork& net, const Dataset& ds, const std::vector<int>& ids);
EvalResult evaluate(ExecutableNetwork& net, const Dataset& ds);  // validation split

}  // namespace msnas
