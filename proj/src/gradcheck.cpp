#include "boxseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "boxseg/error.hpp"
#include "boxseg/models.hpp"
#include "boxseg/ops.hpp"
#include "boxseg/random.hpp"
#include "boxseg/selfcorrect.hpp"

namespace boxseg {
namespace {

struct Coordinate {
  std::string input;
  std::size_t index;
};

struct Probe {
  double loss = 0.0;
  std::vector<bool> relu_active;  // sign pattern of every relu input
};

Probe evaluate(const LossBuilder& build, const ParamSet& inputs) {
  Graph g;
  std::map<std::string, Var> leaves;
  for (const auto& [name, t] : inputs) leaves.emplace(name, g.param(name, t, false));
  Probe out;
  out.loss = build(g, leaves).value()[0];
  for (std::size_t id = 0; id < g.size(); ++id) {
    if (g.kind(id) != OpKind::kRelu) continue;
    for (double v : g.value(g.parents(id)[0]).data()) out.relu_active.push_back(v > 0.0);
  }
  return out;
}

Tensor random_tensor(Rng& rng, Shape dims, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(dims));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero so finite differences never straddle the
// ReLU kink.
Tensor away_from_zero(Rng& rng, Shape dims) {
  Tensor t(std::move(dims));
  for (double& v : t.data()) {
    const double mag = rng.uniform(0.1, 1.0);
    v = rng.bernoulli(0.5) ? mag : -mag;
  }
  return t;
}

Tensor random_simplex(Rng& rng, Shape dims) {
  Tensor t(dims);
  const Nchw s = as_nchw(t.dims(), "random_simplex");
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < s.plane(); ++i) {
      double total = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const double v = rng.uniform(0.05, 1.0);
        t[n * s.image() + c * s.plane() + i] = v;
        total += v;
      }
      for (std::size_t c = 0; c < s.c; ++c) t[n * s.image() + c * s.plane() + i] /= total;
    }
  }
  return t;
}

std::vector<std::uint8_t> random_labels(Rng& rng, std::size_t count, std::size_t classes) {
  std::vector<std::uint8_t> out(count);
  for (auto& v : out) v = static_cast<std::uint8_t>(rng.below(classes));
  return out;
}

struct Case {
  LossBuilder build;
  ParamSet inputs;
};

ArchConfig tiny_arch() {
  ArchConfig a;
  a.num_classes = 2;
  a.height = 8;
  a.width = 8;
  a.encoder_widths = {3, 4, 5};
  a.fine_tap = 0;
  a.coarse_tap = 2;
  a.decoder_width = 4;
  a.head_width = 6;
  return a;
}

ParamSet prefixed(const ParamSet& params, const std::string& prefix) {
  ParamSet out;
  for (const auto& [name, t] : params) out.add(prefix + name, t);
  return out;
}

BoundParams unprefix(const std::map<std::string, Var>& leaves, const std::string& prefix) {
  BoundParams out;
  for (const auto& [name, v] : leaves) {
    if (name.rfind(prefix, 0) == 0) out.emplace(name.substr(prefix.size()), v);
  }
  return out;
}

void merge_into(ParamSet& into, const ParamSet& from) {
  for (const auto& [name, t] : from) into.add(name, t);
}

Case make_case(const std::string& name, Rng& rng) {
  Case c;
  auto weights_like = [&rng](const Shape& dims) { return random_tensor(rng, dims); };

  if (name == "conv2d" || name == "conv2d_stride2") {
    const std::size_t stride = name == "conv2d" ? 1 : 2;
    c.inputs.add("x", random_tensor(rng, {2, 3, 6, 6}));
    c.inputs.add("k", random_tensor(rng, {4, 3, 3, 3}));
    c.inputs.add("b", random_tensor(rng, {4}));
    const Shape out = kernels::conv2d(c.inputs.at("x"), c.inputs.at("k"), c.inputs.at("b"), {stride, 1}).dims();
    const Tensor w = weights_like(out);
    c.build = [w, stride](Graph&, const std::map<std::string, Var>& in) {
      return ops::weighted_sum(ops::conv2d(in.at("x"), in.at("k"), in.at("b"), {stride, 1}), w);
    };
  } else if (name == "relu" || name == "sigmoid" || name == "softmax" || name == "scale" || name == "sum") {
    c.inputs.add("x", away_from_zero(rng, {2, 4, 4, 4}));
    const Tensor w = weights_like({2, 4, 4, 4});
    c.build = [w, name](Graph&, const std::map<std::string, Var>& in) {
      Var x = in.at("x");
      if (name == "relu") return ops::weighted_sum(ops::relu(x), w);
      if (name == "sigmoid") return ops::weighted_sum(ops::sigmoid(x), w);
      if (name == "softmax") return ops::weighted_sum(ops::softmax(x), w);
      if (name == "scale") return ops::weighted_sum(ops::scale(x, -1.75), w);
      return ops::sum(ops::mul(x, x));
    };
  } else if (name == "mul" || name == "mul_broadcast" || name == "add") {
    c.inputs.add("a", random_tensor(rng, {3, 2, 4, 4}));
    c.inputs.add("b", random_tensor(rng, {name == "mul_broadcast" ? 1u : 3u, 2, 4, 4}));
    const Tensor w = weights_like({3, 2, 4, 4});
    c.build = [w, name](Graph&, const std::map<std::string, Var>& in) {
      if (name == "add") return ops::weighted_sum(ops::add(in.at("a"), in.at("b")), w);
      return ops::weighted_sum(ops::mul(in.at("a"), in.at("b")), w);
    };
  } else if (name == "resize_nearest_up" || name == "resize_nearest_down") {
    const bool up = name == "resize_nearest_up";
    c.inputs.add("x", random_tensor(rng, up ? Shape{2, 3, 4, 5} : Shape{2, 3, 8, 8}));
    const std::size_t oh = up ? 9 : 3, ow = up ? 10 : 5;
    const Tensor w = weights_like({2, 3, oh, ow});
    c.build = [w, oh, ow](Graph&, const std::map<std::string, Var>& in) {
      return ops::weighted_sum(ops::resize_nearest(in.at("x"), oh, ow), w);
    };
  } else if (name == "resize_bilinear_up" || name == "resize_bilinear_down") {
    const bool up = name == "resize_bilinear_up";
    c.inputs.add("x", random_tensor(rng, up ? Shape{2, 3, 4, 5} : Shape{2, 3, 8, 8}));
    const std::size_t oh = up ? 8 : 3, ow = up ? 11 : 5;
    const Tensor w = weights_like({2, 3, oh, ow});
    c.build = [w, oh, ow](Graph&, const std::map<std::string, Var>& in) {
      return ops::weighted_sum(ops::resize_bilinear(in.at("x"), oh, ow), w);
    };
  } else if (name == "concat_channels" || name == "slice_channels") {
    c.inputs.add("a", random_tensor(rng, {2, 2, 4, 4}));
    c.inputs.add("b", random_tensor(rng, {2, 3, 4, 4}));
    const Tensor w = weights_like(name == "concat_channels" ? Shape{2, 5, 4, 4} : Shape{2, 2, 4, 4});
    c.build = [w, name](Graph&, const std::map<std::string, Var>& in) {
      Var cat = ops::concat_channels(in.at("a"), in.at("b"));
      if (name == "concat_channels") return ops::weighted_sum(cat, w);
      return ops::weighted_sum(ops::slice_channels(cat, 1, 3), w);
    };
  } else if (name == "soft_cross_entropy") {
    c.inputs.add("l", random_tensor(rng, {2, 4, 4, 4}, -3.0, 3.0));
    const Tensor q = random_simplex(rng, {2, 4, 4, 4});
    c.build = [q](Graph&, const std::map<std::string, Var>& in) {
      return ops::soft_cross_entropy(q, in.at("l"), 7.0);
    };
  } else if (name == "neg_log_likelihood") {
    c.inputs.add("l", random_tensor(rng, {2, 4, 4, 4}, -3.0, 3.0));
    const auto labels = random_labels(rng, 2 * 16, 4);
    c.build = [labels](Graph&, const std::map<std::string, Var>& in) {
      return ops::neg_log_likelihood(in.at("l"), labels, 5.0);
    };
  } else {
    // Composed losses on a tiny architecture.
    const ArchConfig arch = tiny_arch();
    const std::size_t n = 2;
    const Tensor images = random_tensor(rng, {n, 3, arch.height, arch.width}, 0.0, 1.0);
    Tensor boxes({n, arch.channels(), arch.height, arch.width});
    for (std::size_t b = 0; b < n; ++b) {
      const Tensor one = boxes_to_mask({{1, 1, 2, 5, 7}, {2, 4, 0, 8, 4}}, arch.num_classes, arch.height,
                                       arch.width)
                             .tensor();
      std::copy_n(one.ptr(), one.numel(), boxes.ptr() + b * one.numel());
    }
    const auto labels = random_labels(rng, n * arch.height * arch.width, arch.channels());
    const ParamSet theta = init_ancillary(arch, rng.next());
    const ParamSet phi = init_primary(arch, rng.next());
    const ParamSet lambda = init_selfcorr_head(arch, rng.next());
    const Tensor anc_logits = predict_ancillary(arch, theta, images, boxes);
    const double pixels = static_cast<double>(n * arch.height * arch.width);
    const double alpha = 3.0;

    if (name == "loss_ancillary") {
      merge_into(c.inputs, prefixed(theta, "theta."));
      c.build = [=](Graph& g, const std::map<std::string, Var>& in) {
        Var logits = ancillary_forward(arch, unprefix(in, "theta."), g.constant(images), g.constant(boxes));
        return loss_fully_supervised(logits, labels, pixels);
      };
    } else if (name == "loss_no_correction" || name == "loss_linear") {
      merge_into(c.inputs, prefixed(phi, "phi."));
      // The target is frozen at the unperturbed parameters, as in training.
      const Tensor q = target_distribution(name == "loss_linear" ? Strategy::kLinear : Strategy::kNone,
                                           PixelLogits(predict_primary(arch, phi, images)),
                                           PixelLogits(anc_logits), nullptr, arch, alpha)
                           .probs();
      c.build = [=](Graph& g, const std::map<std::string, Var>& in) {
        const BoundParams p = unprefix(in, "phi.");
        Var lf = primary_forward(arch, p, g.constant(images));
        Var lw = primary_forward(arch, p, g.constant(images));
        return ops::add(loss_fully_supervised(lf, labels, pixels), loss_weak(lw, q, pixels));
      };
    } else if (name == "loss_conv") {
      merge_into(c.inputs, prefixed(phi, "phi."));
      merge_into(c.inputs, prefixed(lambda, "lambda."));
      // The head sees detached logits, so finite differences must see them frozen too.
      const Tensor l0 = predict_primary(arch, phi, images);
      const Tensor q =
          target_distribution(Strategy::kConv, PixelLogits(l0), PixelLogits(anc_logits), &lambda, arch, 0.0)
              .probs();
      c.build = [=](Graph& g, const std::map<std::string, Var>& in) {
        const BoundParams p = unprefix(in, "phi.");
        const BoundParams lam = unprefix(in, "lambda.");
        Var anc = g.constant(anc_logits);
        Var lf = primary_forward(arch, p, g.constant(images));
        Var lw = primary_forward(arch, p, g.constant(images));
        Var total = ops::add(loss_fully_supervised(lf, labels, pixels), loss_weak(lw, q, pixels));
        return ops::add(total, loss_qconv(arch, lam, g.constant(l0), anc, labels, pixels));
      };
    } else if (name == "selfcorr_head") {
      merge_into(c.inputs, prefixed(lambda, "lambda."));
      c.inputs.add("l", random_tensor(rng, {n, arch.channels(), arch.height, arch.width}, -2.0, 2.0));
      const Tensor w = random_tensor(rng, {n, arch.channels(), arch.height, arch.width});
      c.build = [=](Graph&, const std::map<std::string, Var>& in) {
        return ops::weighted_sum(
            selfcorr_head_forward(arch, unprefix(in, "lambda."), in.at("l"), in.at("l")), w);
      };
    } else {
      throw_invalid("grad-check: unknown check '" + name + "'");
    }
  }
  return c;
}

}  // namespace

GradCheckResult check_gradient(const std::string& name, const LossBuilder& build,
                               const ParamSet& inputs, std::uint64_t seed,
                               const GradCheckOptions& options) {
  Graph g;
  std::map<std::string, Var> leaves;
  for (const auto& [leaf, t] : inputs) leaves.emplace(leaf, g.param(leaf, t, true));
  g.backward(build(g, leaves));
  const ParamSet analytic = g.param_grads();

  std::vector<Coordinate> all;
  for (const auto& [leaf, t] : inputs)
    for (std::size_t i = 0; i < t.numel(); ++i) all.push_back({leaf, i});
  Rng rng(seed);
  rng.shuffle(all);

  GradCheckResult result{name, 0, 0.0, true};
  ParamSet probe = inputs;
  for (const Coordinate& c : all) {
    if (result.coordinates == options.coordinates) break;
    double& v = probe.at(c.input)[c.index];
    const double saved = v;
    v = saved + options.step;
    const Probe plus = evaluate(build, probe);
    v = saved - options.step;
    const Probe minus = evaluate(build, probe);
    v = saved;
    // A relu flipping inside [x-h, x+h] makes the difference quotient
    // meaningless; such coordinates are replaced by the next one.
    if (plus.relu_active != minus.relu_active) {
      ++result.skipped_kinks;
      continue;
    }
    ++result.coordinates;
    const double fd = (plus.loss - minus.loss) / (2.0 * options.step);
    const double an = analytic.at(c.input)[c.index];
    const double rel = std::abs(an - fd) / std::max(1.0, std::abs(fd));
    result.max_rel_error = std::max(result.max_rel_error, rel);
  }
  result.passed = result.max_rel_error < options.tolerance;
  return result;
}

std::vector<std::string> gradcheck_names() {
  return {"conv2d",          "conv2d_stride2",    "relu",           "sigmoid",
          "softmax",         "mul",               "mul_broadcast",  "add",
          "scale",           "sum",               "resize_nearest_up", "resize_nearest_down",
          "resize_bilinear_up", "resize_bilinear_down",
          "concat_channels", "slice_channels",    "soft_cross_entropy", "neg_log_likelihood",
          "selfcorr_head",   "loss_ancillary",    "loss_no_correction", "loss_linear",
          "loss_conv"};
}

std::vector<GradCheckResult> run_gradcheck(const std::string& which, std::uint64_t seed,
                                           const GradCheckOptions& options) {
  std::vector<std::string> names;
  if (which == "all") {
    names = gradcheck_names();
  } else {
    const auto known = gradcheck_names();
    if (std::find(known.begin(), known.end(), which) == known.end()) {
      throw_invalid("grad-check: unknown op '" + which + "'");
    }
    names.push_back(which);
  }
  std::vector<GradCheckResult> out;
  for (const std::string& name : names) {
    Rng rng(derive_seed(seed, "gradcheck:" + name));
    Case c = make_case(name, rng);
    out.push_back(check_gradient(name, c.build, c.inputs, rng.next(), options));
  }
  return out;
}

}  // namespace boxseg
