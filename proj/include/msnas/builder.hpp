#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "msnas/graph.hpp"
#include "msnas/schedule.hpp"
#include "msnas/tensor.hpp"

namespace msnas {

enum class TemporalPoolMode { Average, Max };

struct CompileOptions {
  TemporalPoolMode temporal_pool = TemporalPoolMode::Average;
  double bn_momentum = 0.99;
  double bn_eps = 1e-5;
  uint64_t init_seed = 1;  // convolution weights are fan-in-scaled normal draws
};

// A compiled, trainable network. The layer plan follows the graph's level
// order; the parameter store keeps one gate logit per edge so learned
// connection weights can be read back after training. Instances may be
// used from one thread at a time; distinct instances are independent.
class ExecutableNetwork {
 public:
  // Inputs are [B,T,Y,X,C] with the configured modality channel counts;
  // every appearance (motion) stem receives the appearance (motion)
  // tensor. Returns class logits [B, num_classes].
  Tensor forward(const Tensor& appearance, const Tensor& motion, bool training);

  // Softmax class probabilities in eval mode.
  Tensor predict(const Tensor& appearance, const Tensor& motion);

  Tensor loss(const Tensor& appearance, const Tensor& motion, const std::vector<int>& labels,
              double label_smoothing, bool training = true);

  std::vector<Tensor>& parameters() { return params_; }
  long long num_trainable() const;

  std::map<std::pair<NodeId, NodeId>, double> edge_logits() const;
  ArchitectureGraph graph_with_trained_logits() const;

  // Human-readable layer plan: stems, adapters and module stacks per node.
  std::string plan_summary() const;

  const ArchitectureGraph& graph() const { return graph_; }
  const LayerSchedule& schedule() const { return schedule_; }
  int num_classes() const { return schedule_.num_classes; }

 private:
  friend ExecutableNetwork compile(const ArchitectureGraph&, const LayerSchedule&,
                                   const CompileOptions&);

  struct BnRef {
    int gamma = -1;
    int beta = -1;
    int state = -1;
  };
  struct AdapterPlan {
    NodeId src = -1;
    int pool_ratio = 1;
    int conv = -1;  // param index or -1 when widths already match
    int logit = -1;
  };
  struct ModulePlan {
    ModuleKind kind = ModuleKind::Plain2D;
    int stride = 1;
    int entry = -1;  // 1x1 bottleneck or depthwise temporal taps
    BnRef entry_bn;
    int mid = -1;  // 3x3 2D conv
    BnRef mid_bn;
    int expand = -1;  // 1x1 to the block output width
    BnRef expand_bn;
    int proj = -1;  // projected shortcut (first module only)
    BnRef proj_bn;
  };
  struct NodePlan {
    NodeId id = -1;
    NodeKind kind = NodeKind::Intermediate;
    int dilation = 1;
    std::vector<AdapterPlan> inputs;
    // stem layers
    int stem_conv = -1;
    BnRef stem_conv_bn;
    int stem_temporal = -1;
    BnRef stem_temporal_bn;
    // block layers
    std::vector<ModulePlan> modules;
  };
  struct SinkPlan {
    std::vector<NodeId> level4;
    std::vector<int> adapt;  // aligned with level4; -1 when width matches
    int fc_w = -1;
    int fc_b = -1;
  };

  Tensor run_node(const NodePlan& plan, const std::vector<Tensor>& regs, const Tensor& app,
                  const Tensor& mot, bool training);
  Tensor apply_bn_relu(const Tensor& x, const BnRef& bn, bool training, bool with_relu);

  ArchitectureGraph graph_;
  LayerSchedule schedule_;
  CompileOptions opts_;
  std::vector<Tensor> params_;
  std::vector<BatchNormState> bn_states_;
  std::vector<NodePlan> plan_;
  SinkPlan sink_;
  std::map<std::pair<NodeId, NodeId>, int> logit_index_;
};

// Validates the graph, infers shapes and materializes the network.
// Throws ShapeError (with the offending node) or Error on an invalid graph.
ExecutableNetwork compile(const ArchitectureGraph& g, const LayerSchedule& schedule,
                          const CompileOptions& opts = {});

ExecutableNetwork compile(const ArchitectureGraph& g, LayerSchedule schedule, int num_classes,
                          const CompileOptions& opts = {});

// --- hand-designed baselines ------------------------------------------------

enum class BaselineName {
  TwoStreamLateFusion,
  TwoStreamFuseLv4,
  TwoStreamFlowToRgb,
  TwoStreamFully,
  FourStreamFully,
};

const std::vector<std::string>& baseline_names();
BaselineName baseline_from_string(const std::string& name);  // throws Error on unknown name

ArchitectureGraph build_baseline(BaselineName name, const GraphDefaults& defaults = GraphDefaults::desk());

}  // namespace msnas
