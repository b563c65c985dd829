#include "msnas/builder.hpp"

#include <algorithm>
#include <cmath>

#include "msnas/rng.hpp"

namespace msnas {

namespace {

uint64_t chain_seed(uint64_t base, uint64_t a, uint64_t b) {
  return derive_seed(derive_seed(base, a), b);
}

}  // namespace

ExecutableNetwork compile(const ArchitectureGraph& input, const LayerSchedule& schedule,
                          const CompileOptions& opts) {
  ArchitectureGraph g = canonicalized(input);
  const ValidationReport report = validate_graph(g);
  if (!report.ok) throw Error("compile: invalid graph:\n" + report.to_string());

  ExecutableNetwork net;
  net.graph_ = g;
  net.schedule_ = schedule;
  net.opts_ = opts;

  const auto colors = structural_colors(g);
  const auto color = [&](NodeId id) { return colors[static_cast<size_t>(id)]; };

  // Parameter streams are keyed by (level, kind, C) plus the node's rank
  // among structurally distinct peers with the same attributes. Mutations
  // therefore re-draw only the parameters of the nodes they touch, while
  // isomorphic graphs still compile to identical networks (ranks follow
  // the relabeling-invariant structural colors; exact twins may swap
  // streams, which is an automorphism).
  std::vector<uint64_t> slot(g.nodes.size());
  {
    std::vector<uint64_t> attr(g.nodes.size());
    for (const auto& n : g.nodes) {
      uint64_t a = derive_seed(0xa77a, static_cast<uint64_t>(n.level));
      a = derive_seed(a, static_cast<uint64_t>(n.kind));
      a = derive_seed(a, static_cast<uint64_t>(n.channels));
      attr[static_cast<size_t>(n.id)] = a;
    }
    for (const auto& n : g.nodes) {
      const size_t i = static_cast<size_t>(n.id);
      int rank = 0;
      for (const auto& m : g.nodes) {
        const size_t j = static_cast<size_t>(m.id);
        if (attr[j] == attr[i] &&
            std::make_pair(colors[j], m.id) < std::make_pair(colors[i], n.id))
          ++rank;
      }
      slot[i] = derive_seed(attr[i], static_cast<uint64_t>(rank));
    }
  }
  const auto param_slot = [&](NodeId id) { return slot[static_cast<size_t>(id)]; };

  // Output cumulative spatial stride per node; used to derive adapter pool
  // ratios without knowing the runtime input size.
  std::vector<int> cs_out(g.nodes.size(), 0);
  std::vector<int> cs_in(g.nodes.size(), 0);
  for (const auto& n : g.nodes) {
    if (n.is_stem()) {
      cs_out[static_cast<size_t>(n.id)] = 4;
      continue;
    }
    int cs = 0;
    for (NodeId src : g.inputs_of(n.id)) cs = std::max(cs, cs_out[static_cast<size_t>(src)]);
    cs_in[static_cast<size_t>(n.id)] = cs;
    cs_out[static_cast<size_t>(n.id)] = cs * n.spatial_stride;
  }

  const auto add_param = [&](std::vector<int> shape, uint64_t seed, double fan_in) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    Rng rng(seed);
    const real std_dev = static_cast<real>(std::sqrt(2.0 / fan_in));
    for (auto& v : t.values_mut()) v = static_cast<real>(rng.normal()) * std_dev;
    net.params_.push_back(t);
    return static_cast<int>(net.params_.size() - 1);
  };
  const auto add_const = [&](std::vector<int> shape, real value) {
    net.params_.push_back(Tensor::full(std::move(shape), value, true));
    return static_cast<int>(net.params_.size() - 1);
  };
  const auto add_bn = [&](int channels) {
    ExecutableNetwork::BnRef bn;
    bn.gamma = add_const({channels}, real{1});
    bn.beta = add_const({channels}, real{0});
    net.bn_states_.emplace_back();
    bn.state = static_cast<int>(net.bn_states_.size() - 1);
    return bn;
  };

  for (const auto& n : g.nodes) {
    ExecutableNetwork::NodePlan plan;
    plan.id = n.id;
    plan.kind = n.kind;
    plan.dilation = n.temporal_resolution;
    uint64_t slot_index = 0;
    const auto next_seed = [&] { return chain_seed(opts.init_seed, param_slot(n.id), slot_index++); };

    if (n.is_stem()) {
      const int cin = n.kind == NodeKind::AppearanceStem ? schedule.in_channels_appearance
                                                         : schedule.in_channels_motion;
      plan.stem_conv = add_param({7, 7, cin, n.channels}, next_seed(), 49.0 * cin);
      plan.stem_conv_bn = add_bn(n.channels);
      if (n.kind == NodeKind::AppearanceStem) {
        plan.stem_temporal = add_param({5, n.channels, n.channels}, next_seed(), 5.0 * n.channels);
        plan.stem_temporal_bn = add_bn(n.channels);
      }
      net.plan_.push_back(std::move(plan));
      continue;
    }

    const int in_w = block_in_width(g, schedule, n.level);
    const int out_w = block_out_width(n, schedule);
    const int d = schedule.d_per_level[static_cast<size_t>(n.level)];
    const int c = n.channels;

    // Aggregation order follows the structural colors so that isomorphic
    // graphs accumulate in the same sequence.
    std::vector<NodeId> sources = g.inputs_of(n.id);
    std::sort(sources.begin(), sources.end(), [&](NodeId a, NodeId b) {
      return std::make_pair(color(a), a) < std::make_pair(color(b), b);
    });
    for (NodeId src : sources) {
      ExecutableNetwork::AdapterPlan ap;
      ap.src = src;
      const int ratio = cs_in[static_cast<size_t>(n.id)] / cs_out[static_cast<size_t>(src)];
      if (cs_in[static_cast<size_t>(n.id)] % cs_out[static_cast<size_t>(src)] != 0)
        throw ShapeError("compile: incompatible spatial ratio at node " + std::to_string(n.id));
      ap.pool_ratio = ratio;
      const int src_w = block_out_width(g.node(src), schedule);
      if (src_w != in_w)
        ap.conv = add_param({src_w, in_w},
                            chain_seed(opts.init_seed, param_slot(n.id), param_slot(src)), src_w);
      const Edge* e = g.find_edge(src, n.id);
      ap.logit = add_const({1}, static_cast<real>(e->logit));
      net.logit_index_[{src, n.id}] = ap.logit;
      plan.inputs.push_back(ap);
    }

    const auto seq = module_sequence(schedule.m_per_level[static_cast<size_t>(n.level)]);
    for (size_t j = 0; j < seq.size(); ++j) {
      ExecutableNetwork::ModulePlan mp;
      mp.kind = seq[j];
      mp.stride = j == 0 ? n.spatial_stride : 1;
      const int entry_w = j == 0 ? in_w : out_w;
      if (mp.kind == ModuleKind::Plain2D) {
        mp.entry = add_param({entry_w, c}, next_seed(), entry_w);
        mp.entry_bn = add_bn(c);
        mp.mid = add_param({3, 3, c, d}, next_seed(), 9.0 * c);
      } else {
        mp.entry = add_param({3, entry_w}, next_seed(), 3.0);
        mp.entry_bn = add_bn(entry_w);
        mp.mid = add_param({3, 3, entry_w, d}, next_seed(), 9.0 * entry_w);
      }
      mp.mid_bn = add_bn(d);
      mp.expand = add_param({d, out_w}, next_seed(), d);
      mp.expand_bn = add_bn(out_w);
      if (j == 0) {
        mp.proj = add_param({1, 1, entry_w, out_w}, next_seed(), entry_w);
        mp.proj_bn = add_bn(out_w);
      }
      plan.modules.push_back(mp);
    }
    net.plan_.push_back(std::move(plan));
  }

  const int h = head_width(g, schedule);
  std::vector<NodeId> level4 = g.nodes_at_level(kNumLevels);
  std::sort(level4.begin(), level4.end(), [&](NodeId a, NodeId b) {
    return std::make_pair(color(a), a) < std::make_pair(color(b), b);
  });
  for (NodeId id : level4) {
    net.sink_.level4.push_back(id);
    const int w = block_out_width(g.node(id), schedule);
    net.sink_.adapt.push_back(
        w == h ? -1 : add_param({w, h}, chain_seed(opts.init_seed, 0x517eadULL, param_slot(id)), w));
  }
  const int head_in = schedule.concat_level4 ? static_cast<int>(net.sink_.level4.size()) * h : h;
  net.sink_.fc_w = add_param({head_in, schedule.num_classes},
                             chain_seed(opts.init_seed, 0x517eadULL, 0xFC), head_in);
  net.sink_.fc_b = add_const({schedule.num_classes}, real{0});
  return net;
}

ExecutableNetwork compile(const ArchitectureGraph& g, LayerSchedule schedule, int num_classes,
                          const CompileOptions& opts) {
  schedule.num_classes = num_classes;
  return compile(g, schedule, opts);
}

Tensor ExecutableNetwork::apply_bn_relu(const Tensor& x, const BnRef& bn, bool training,
                                        bool with_relu) {
  Tensor y = batch_norm(x, params_[static_cast<size_t>(bn.gamma)],
                        params_[static_cast<size_t>(bn.beta)],
                        bn_states_[static_cast<size_t>(bn.state)], training, opts_.bn_momentum,
                        opts_.bn_eps);
  return with_relu ? relu(y) : y;
}

Tensor ExecutableNetwork::run_node(const NodePlan& plan, const std::vector<Tensor>& regs,
                                   const Tensor& app, const Tensor& mot, bool training) {
  if (plan.kind != NodeKind::Intermediate) {
    const Tensor& input = plan.kind == NodeKind::AppearanceStem ? app : mot;
    Tensor x = conv2d(input, params_[static_cast<size_t>(plan.stem_conv)], 2);
    x = apply_bn_relu(x, plan.stem_conv_bn, training, true);
    if (plan.stem_temporal >= 0) {
      x = temporal_conv1d_dilated(x, params_[static_cast<size_t>(plan.stem_temporal)],
                                  plan.dilation);
      x = apply_bn_relu(x, plan.stem_temporal_bn, training, true);
    }
    return max_pool_spatial(x, 3, 2);
  }

  std::vector<Tensor> inputs;
  std::vector<Tensor> logits;
  inputs.reserve(plan.inputs.size());
  for (const auto& ap : plan.inputs) {
    Tensor t = regs[static_cast<size_t>(ap.src)];
    if (ap.pool_ratio > 1) t = max_pool_spatial(t, ap.pool_ratio, ap.pool_ratio);
    if (ap.conv >= 0) t = conv1x1(t, params_[static_cast<size_t>(ap.conv)]);
    inputs.push_back(std::move(t));
    logits.push_back(params_[static_cast<size_t>(ap.logit)]);
  }
  Tensor x = gated_weighted_sum(inputs, logits);

  for (const auto& mp : plan.modules) {
    Tensor shortcut = x;
    if (mp.proj >= 0) {
      shortcut = conv2d(x, params_[static_cast<size_t>(mp.proj)], mp.stride);
      shortcut = apply_bn_relu(shortcut, mp.proj_bn, training, false);
    }
    Tensor h;
    if (mp.kind == ModuleKind::Plain2D) {
      h = conv1x1(x, params_[static_cast<size_t>(mp.entry)]);
    } else {
      h = temporal_conv1d_depthwise(x, params_[static_cast<size_t>(mp.entry)], plan.dilation);
    }
    h = apply_bn_relu(h, mp.entry_bn, training, true);
    h = conv2d(h, params_[static_cast<size_t>(mp.mid)], mp.stride);
    h = apply_bn_relu(h, mp.mid_bn, training, true);
    h = conv1x1(h, params_[static_cast<size_t>(mp.expand)]);
    h = apply_bn_relu(h, mp.expand_bn, training, false);
    x = relu(add(h, shortcut));
  }
  return x;
}

Tensor ExecutableNetwork::forward(const Tensor& appearance, const Tensor& motion, bool training) {
  if (appearance.rank() != 5 || motion.rank() != 5)
    throw ShapeError("forward: inputs must be [B,T,Y,X,C]");
  if (appearance.dim(4) != schedule_.in_channels_appearance)
    throw ShapeError("forward: appearance channel count mismatch");
  if (motion.dim(4) != schedule_.in_channels_motion)
    throw ShapeError("forward: motion channel count mismatch");
  for (int i = 0; i < 4; ++i)
    if (appearance.dim(i) != motion.dim(i))
      throw ShapeError("forward: appearance/motion dims differ");

  std::vector<Tensor> regs(graph_.nodes.size());
  for (const auto& plan : plan_)
    regs[static_cast<size_t>(plan.id)] = run_node(plan, regs, appearance, motion, training);

  std::vector<Tensor> pooled;
  for (size_t i = 0; i < sink_.level4.size(); ++i) {
    Tensor t = regs[static_cast<size_t>(sink_.level4[i])];
    if (sink_.adapt[i] >= 0) t = conv1x1(t, params_[static_cast<size_t>(sink_.adapt[i])]);
    pooled.push_back(avg_pool_spatial(t));
  }
  Tensor head = schedule_.concat_level4 ? concat_channels(pooled) : mean_of(pooled);
  head = opts_.temporal_pool == TemporalPoolMode::Average ? pool_time_avg(head)
                                                          : pool_time_max(head);
  return linear(head, params_[static_cast<size_t>(sink_.fc_w)],
                params_[static_cast<size_t>(sink_.fc_b)]);
}

Tensor ExecutableNetwork::predict(const Tensor& appearance, const Tensor& motion) {
  return softmax(forward(appearance, motion, false));
}

Tensor ExecutableNetwork::loss(const Tensor& appearance, const Tensor& motion,
                               const std::vector<int>& labels, double label_smoothing,
                               bool training) {
  return softmax_cross_entropy(forward(appearance, motion, training), labels, label_smoothing);
}

std::string ExecutableNetwork::plan_summary() const {
  std::string out;
  const auto shape_of = [&](int idx) {
    std::string s = "[";
    const auto& shape = params_[static_cast<size_t>(idx)].shape();
    for (size_t i = 0; i < shape.size(); ++i)
      s += (i ? "x" : "") + std::to_string(shape[static_cast<size_t>(i)]);
    return s + "]";
  };
  for (const auto& plan : plan_) {
    out += "node " + std::to_string(plan.id);
    if (plan.kind != NodeKind::Intermediate) {
      out += std::string(" stem(") +
             (plan.kind == NodeKind::AppearanceStem ? "appearance" : "motion") + "): conv7x7/2 " +
             shape_of(plan.stem_conv);
      if (plan.stem_temporal >= 0)
        out += " temporal5 r=" + std::to_string(plan.dilation) + " " + shape_of(plan.stem_temporal);
      out += " maxpool3/2\n";
      continue;
    }
    out += " block r=" + std::to_string(plan.dilation) + ":";
    for (const auto& ap : plan.inputs) {
      out += " in(" + std::to_string(ap.src);
      if (ap.pool_ratio > 1) out += " pool/" + std::to_string(ap.pool_ratio);
      if (ap.conv >= 0) out += " conv1x1 " + shape_of(ap.conv);
      out += ")";
    }
    for (const auto& mp : plan.modules) {
      out += mp.kind == ModuleKind::Plain2D ? " | 2D[1x1 " : " | (2+1)D[temporal3-dw ";
      out += shape_of(mp.entry) + " 3x3 " + shape_of(mp.mid) + " 1x1 " + shape_of(mp.expand);
      if (mp.proj >= 0) out += " proj/" + std::to_string(mp.stride);
      out += "]";
    }
    out += "\n";
  }
  out += "sink:";
  for (size_t i = 0; i < sink_.level4.size(); ++i) {
    out += " node" + std::to_string(sink_.level4[i]);
    if (sink_.adapt[i] >= 0) out += "(conv1x1 " + shape_of(sink_.adapt[i]) + ")";
  }
  out += schedule_.concat_level4 ? " concat" : " mean";
  out += opts_.temporal_pool == TemporalPoolMode::Average ? " time-avg fc\n"
                                                           : " time-max fc\n";
  return out;
}

long long ExecutableNetwork::num_trainable() const {
  long long n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

std::map<std::pair<NodeId, NodeId>, double> ExecutableNetwork::edge_logits() const {
  std::map<std::pair<NodeId, NodeId>, double> out;
  for (const auto& [key, idx] : logit_index_)
    out[key] = static_cast<double>(params_[static_cast<size_t>(idx)].values()[0]);
  return out;
}

ArchitectureGraph ExecutableNetwork::graph_with_trained_logits() const {
  return graph_.with_logits(edge_logits());
}

// --- hand-designed baselines ---------------------------------------------------

const std::vector<std::string>& baseline_names() {
  static const std::vector<std::string> names{
      "two_stream_late_fusion", "two_stream_fuse_lv4", "two_stream_flow_to_rgb",
      "two_stream_fully", "four_stream_fully"};
  return names;
}

BaselineName baseline_from_string(const std::string& name) {
  const auto& names = baseline_names();
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<BaselineName>(i);
  throw Error("unknown baseline '" + name + "'");
}

namespace {

struct Assembler {
  ArchitectureGraph g;
  int next_id = 0;

  explicit Assembler(const GraphDefaults& defaults) {
    g.level_channel_budget = defaults.level_budget;
  }

  NodeId add(int level, NodeKind kind, int channels, int stride) {
    BlockNode n;
    n.id = next_id++;
    n.level = level;
    n.kind = kind;
    n.channels = channels;
    n.temporal_resolution = 1;
    n.spatial_stride = stride;
    g.nodes.push_back(n);
    return n.id;
  }

  void connect(NodeId src, NodeId dst) { g.edges.push_back({src, dst, 0.0}); }

  ArchitectureGraph finish() { return canonicalized(std::move(g)); }
};

int split_budget(int budget, int parts, const char* what) {
  if (budget % parts != 0)
    throw Error(std::string("baseline: level budget for ") + what + " not divisible by " +
                std::to_string(parts));
  return budget / parts;
}

}  // namespace

ArchitectureGraph build_baseline(BaselineName name, const GraphDefaults& defaults) {
  Assembler a(defaults);
  const auto& budget = defaults.level_budget;
  const auto& stride = defaults.level_stride;

  const bool four_stream = name == BaselineName::FourStreamFully;
  const int streams = four_stream ? 4 : 2;
  const int stem_c = four_stream ? split_budget(defaults.stem_channels, 2, "stems")
                                 : defaults.stem_channels;

  std::vector<NodeId> stems;
  for (int s = 0; s < streams; ++s)
    stems.push_back(a.add(0, s < streams / 2 ? NodeKind::AppearanceStem : NodeKind::MotionStem,
                          stem_c, 4));

  switch (name) {
    case BaselineName::TwoStreamLateFusion:
    case BaselineName::TwoStreamFuseLv4:
    case BaselineName::TwoStreamFlowToRgb: {
      const bool fuse4 = name == BaselineName::TwoStreamFuseLv4;
      const bool cross = name == BaselineName::TwoStreamFlowToRgb;
      std::vector<NodeId> rgb{stems[0]}, flow{stems[1]};
      for (int level = 1; level <= kNumLevels; ++level) {
        if (level == kNumLevels && fuse4) {
          const NodeId top = a.add(level, NodeKind::Intermediate,
                                   budget[static_cast<size_t>(level)],
                                   stride[static_cast<size_t>(level)]);
          a.connect(rgb.back(), top);
          a.connect(flow.back(), top);
          rgb.push_back(top);
          break;
        }
        const int c = split_budget(budget[static_cast<size_t>(level)], 2, "two streams");
        const NodeId r = a.add(level, NodeKind::Intermediate, c, stride[static_cast<size_t>(level)]);
        const NodeId f = a.add(level, NodeKind::Intermediate, c, stride[static_cast<size_t>(level)]);
        a.connect(rgb.back(), r);
        a.connect(flow.back(), f);
        if (cross) a.connect(flow.back(), r);  // flow stream feeds the RGB stream, not vice versa
        rgb.push_back(r);
        flow.push_back(f);
      }
      break;
    }
    case BaselineName::TwoStreamFully:
    case BaselineName::FourStreamFully: {
      std::vector<NodeId> prev = stems;
      for (int level = 1; level <= kNumLevels; ++level) {
        const int width = level == kNumLevels ? 1 : streams;
        const int c = split_budget(budget[static_cast<size_t>(level)], width, "parallel nodes");
        std::vector<NodeId> cur;
        for (int i = 0; i < width; ++i)
          cur.push_back(a.add(level, NodeKind::Intermediate, c, stride[static_cast<size_t>(level)]));
        for (NodeId p : prev)
          for (NodeId n : cur) a.connect(p, n);
        prev = cur;
      }
      break;
    }
  }
  return a.finish();
}

}  // namespace msnas
