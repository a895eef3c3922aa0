#include "boxseg/ops.hpp"

#include <cmath>

#include "boxseg/error.hpp"

namespace boxseg::ops {
namespace {

Graph& same_graph(Var a, Var b, const char* op) {
  if (a.graph == nullptr || a.graph != b.graph) {
    throw_invalid(std::string(op) + ": operands belong to different graphs");
  }
  return *a.graph;
}

void accumulate(Tensor& into, const Tensor& from) {
  double* d = into.ptr();
  const double* s = from.ptr();
  for (std::size_t i = 0; i < into.numel(); ++i) d[i] += s[i];
}

Var scalar_node(Graph& g, OpKind kind, std::vector<std::size_t> parents, double v,
                Graph::BackwardFn fn) {
  return g.record(kind, std::move(parents), Tensor::scalar(v), std::move(fn));
}

}  // namespace

Var conv2d(Var x, Var kernel, Var bias, kernels::ConvGeometry geo) {
  Graph& g = same_graph(x, kernel, "conv2d");
  same_graph(x, bias, "conv2d");
  Tensor out = kernels::conv2d(x.value(), kernel.value(), bias.value(), geo);
  const std::size_t xi = x.id, ki = kernel.id, bi = bias.id;
  return g.record(OpKind::kConv2d, {xi, ki, bi}, std::move(out),
                  [xi, ki, bi, geo](Graph& gr, std::size_t self) {
                    Tensor* dx = gr.requires_grad(xi) ? &gr.grad_slot(xi) : nullptr;
                    Tensor* dk = gr.requires_grad(ki) ? &gr.grad_slot(ki) : nullptr;
                    Tensor* db = gr.requires_grad(bi) ? &gr.grad_slot(bi) : nullptr;
                    kernels::conv2d_backward(gr.value(xi), gr.value(ki), geo,
                                             gr.grad(self), dx, dk, db);
                  });
}

Var relu(Var x) {
  Graph& g = *x.graph;
  const std::size_t xi = x.id;
  return g.record(OpKind::kRelu, {xi}, kernels::relu(x.value()),
                  [xi](Graph& gr, std::size_t self) {
                    const Tensor& in = gr.value(xi);
                    const Tensor& dy = gr.grad(self);
                    Tensor& dx = gr.grad_slot(xi);
                    for (std::size_t i = 0; i < dx.numel(); ++i)
                      if (in[i] > 0.0) dx[i] += dy[i];
                  });
}

Var sigmoid(Var x) {
  Graph& g = *x.graph;
  const std::size_t xi = x.id;
  return g.record(OpKind::kSigmoid, {xi}, kernels::sigmoid(x.value()),
                  [xi](Graph& gr, std::size_t self) {
                    const Tensor& y = gr.value(self);
                    const Tensor& dy = gr.grad(self);
                    Tensor& dx = gr.grad_slot(xi);
                    for (std::size_t i = 0; i < dx.numel(); ++i)
                      dx[i] += dy[i] * y[i] * (1.0 - y[i]);
                  });
}

Var softmax(Var x) {
  Graph& g = *x.graph;
  const std::size_t xi = x.id;
  return g.record(OpKind::kSoftmax, {xi}, kernels::softmax_channels(x.value()),
                  [xi](Graph& gr, std::size_t self) {
                    const Tensor& y = gr.value(self);
                    const Tensor& dy = gr.grad(self);
                    Tensor& dx = gr.grad_slot(xi);
                    const Nchw s = as_nchw(y.dims(), "softmax");
                    const std::size_t plane = s.plane();
                    for (std::size_t n = 0; n < s.n; ++n) {
                      const std::size_t base = n * s.image();
                      for (std::size_t i = 0; i < plane; ++i) {
                        double dot = 0.0;
                        for (std::size_t c = 0; c < s.c; ++c) {
                          const std::size_t k = base + c * plane + i;
                          dot += dy[k] * y[k];
                        }
                        for (std::size_t c = 0; c < s.c; ++c) {
                          const std::size_t k = base + c * plane + i;
                          dx[k] += y[k] * (dy[k] - dot);
                        }
                      }
                    }
                  });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b, "mul");
  const std::size_t ai = a.id, bi = b.id;
  return g.record(OpKind::kMul, {ai, bi}, kernels::mul(a.value(), b.value()),
                  [ai, bi](Graph& gr, std::size_t self) {
                    const Tensor& av = gr.value(ai);
                    const Tensor& bv = gr.value(bi);
                    const Tensor& dy = gr.grad(self);
                    const std::size_t inner = bv.numel();
                    if (gr.requires_grad(ai)) {
                      Tensor& da = gr.grad_slot(ai);
                      for (std::size_t i = 0; i < da.numel(); ++i) da[i] += dy[i] * bv[i % inner];
                    }
                    if (gr.requires_grad(bi)) {
                      Tensor& db = gr.grad_slot(bi);
                      for (std::size_t i = 0; i < av.numel(); ++i) db[i % inner] += dy[i] * av[i];
                    }
                  });
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b, "add");
  if (a.dims() != b.dims()) {
    throw Error(ErrorKind::kShape,
                "add: " + shape_string(a.dims()) + " vs " + shape_string(b.dims()), "dims");
  }
  Tensor out = a.value();
  accumulate(out, b.value());
  const std::size_t ai = a.id, bi = b.id;
  return g.record(OpKind::kAdd, {ai, bi}, std::move(out),
                  [ai, bi](Graph& gr, std::size_t self) {
                    if (gr.requires_grad(ai)) accumulate(gr.grad_slot(ai), gr.grad(self));
                    if (gr.requires_grad(bi)) accumulate(gr.grad_slot(bi), gr.grad(self));
                  });
}

Var scale(Var x, double factor) {
  Graph& g = *x.graph;
  Tensor out = x.value();
  for (double& v : out.data()) v *= factor;
  const std::size_t xi = x.id;
  return g.record(OpKind::kScale, {xi}, std::move(out),
                  [xi, factor](Graph& gr, std::size_t self) {
                    const Tensor& dy = gr.grad(self);
                    Tensor& dx = gr.grad_slot(xi);
                    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += factor * dy[i];
                  });
}

Var resize_nearest(Var x, std::size_t out_h, std::size_t out_w) {
  Graph& g = *x.graph;
  const std::size_t xi = x.id;
  return g.record(OpKind::kResizeNearest, {xi},
                  kernels::resize_nearest(x.value(), out_h, out_w),
                  [xi](Graph& gr, std::size_t self) {
                    kernels::resize_nearest_backward(gr.grad(self), gr.grad_slot(xi));
                  });
}

Var resize_bilinear(Var x, std::size_t out_h, std::size_t out_w) {
  Graph& g = *x.graph;
  const std::size_t xi = x.id;
  return g.record(OpKind::kResizeBilinear, {xi},
                  kernels::resize_bilinear(x.value(), out_h, out_w),
                  [xi](Graph& gr, std::size_t self) {
                    kernels::resize_bilinear_backward(gr.grad(self), gr.grad_slot(xi));
                  });
}

Var concat_channels(Var a, Var b) {
  Graph& g = same_graph(a, b, "concat_channels");
  const std::size_t ai = a.id, bi = b.id;
  return g.record(OpKind::kConcatChannels, {ai, bi},
                  kernels::concat_channels(a.value(), b.value()),
                  [ai, bi](Graph& gr, std::size_t self) {
                    const std::size_t ca = as_nchw(gr.value(ai).dims(), "concat").c;
                    const std::size_t cb = as_nchw(gr.value(bi).dims(), "concat").c;
                    const Tensor& dy = gr.grad(self);
                    if (gr.requires_grad(ai))
                      accumulate(gr.grad_slot(ai), kernels::slice_channels(dy, 0, ca));
                    if (gr.requires_grad(bi))
                      accumulate(gr.grad_slot(bi), kernels::slice_channels(dy, ca, ca + cb));
                  });
}

Var slice_channels(Var x, std::size_t begin, std::size_t end) {
  Graph& g = *x.graph;
  const std::size_t xi = x.id;
  return g.record(OpKind::kSliceChannels, {xi},
                  kernels::slice_channels(x.value(), begin, end),
                  [xi, begin, end](Graph& gr, std::size_t self) {
                    Tensor& dx = gr.grad_slot(xi);
                    const Nchw s = as_nchw(dx.dims(), "slice_channels");
                    const Tensor& dy = gr.grad(self);
                    const std::size_t count = end - begin;
                    for (std::size_t n = 0; n < s.n; ++n) {
                      double* d = dx.ptr() + n * s.image() + begin * s.plane();
                      const double* src = dy.ptr() + n * count * s.plane();
                      for (std::size_t i = 0; i < count * s.plane(); ++i) d[i] += src[i];
                    }
                  });
}

Var sum(Var x) {
  Graph& g = *x.graph;
  const std::size_t xi = x.id;
  return scalar_node(g, OpKind::kSum, {xi}, kernels::sum(x.value()),
                     [xi](Graph& gr, std::size_t self) {
                       const double dy = gr.grad(self)[0];
                       for (double& v : gr.grad_slot(xi).data()) v += dy;
                     });
}

Var weighted_sum(Var x, const Tensor& weights) {
  if (weights.dims() != x.dims()) {
    throw Error(ErrorKind::kShape,
                "weighted_sum: weights " + shape_string(weights.dims()) + " vs input " +
                    shape_string(x.dims()),
                "dims");
  }
  Graph& g = *x.graph;
  double total = 0.0;
  for (std::size_t i = 0; i < weights.numel(); ++i) total += weights[i] * x.value()[i];
  const std::size_t xi = x.id;
  return scalar_node(g, OpKind::kWeightedSum, {xi}, total,
                     [xi, weights](Graph& gr, std::size_t self) {
                       const double dy = gr.grad(self)[0];
                       Tensor& dx = gr.grad_slot(xi);
                       for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += dy * weights[i];
                     });
}

Var detach(Var x) { return x.graph->constant(x.value()); }

Var soft_cross_entropy(const Tensor& q, Var logits, double normalizer) {
  if (q.dims() != logits.dims()) {
    throw Error(ErrorKind::kShape,
                "soft_cross_entropy: target " + shape_string(q.dims()) + " vs logits " +
                    shape_string(logits.dims()),
                "dims");
  }
  Graph& g = *logits.graph;
  const Tensor logp = kernels::log_softmax_channels(logits.value());
  double total = 0.0;
  for (std::size_t i = 0; i < q.numel(); ++i) {
    if (q[i] != 0.0) total -= q[i] * logp[i];
  }
  const std::size_t li = logits.id;
  return scalar_node(
      g, OpKind::kSoftCrossEntropy, {li}, total / normalizer,
      [li, q, normalizer](Graph& gr, std::size_t self) {
        // d/dl of -sum_c q_c log softmax(l)_c = softmax(l) * sum_c q_c - q
        const double dy = gr.grad(self)[0] / normalizer;
        const Tensor p = kernels::softmax_channels(gr.value(li));
        Tensor& dl = gr.grad_slot(li);
        const Nchw s = as_nchw(p.dims(), "soft_cross_entropy");
        const std::size_t plane = s.plane();
        for (std::size_t n = 0; n < s.n; ++n) {
          const std::size_t base = n * s.image();
          for (std::size_t i = 0; i < plane; ++i) {
            double mass = 0.0;
            for (std::size_t c = 0; c < s.c; ++c) mass += q[base + c * plane + i];
            for (std::size_t c = 0; c < s.c; ++c) {
              const std::size_t k = base + c * plane + i;
              dl[k] += dy * (p[k] * mass - q[k]);
            }
          }
        }
      });
}

Var neg_log_likelihood(Var logits, std::span<const std::uint8_t> labels,
                       double normalizer) {
  const Nchw s = as_nchw(logits.dims(), "neg_log_likelihood");
  if (labels.size() != s.n * s.plane()) {
    throw_shape("neg_log_likelihood", "pixels", s.n * s.plane(), labels.size());
  }
  Graph& g = *logits.graph;
  const Tensor logp = kernels::log_softmax_channels(logits.value());
  const std::size_t plane = s.plane();
  double total = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t c = labels[n * plane + i];
      if (c >= s.c) throw_shape("neg_log_likelihood", "class", s.c, c);
      total -= logp[n * s.image() + c * plane + i];
    }
  }
  std::vector<std::uint8_t> owned(labels.begin(), labels.end());
  const std::size_t li = logits.id;
  return scalar_node(g, OpKind::kNegLogLikelihood, {li}, total / normalizer,
                     [li, owned = std::move(owned), normalizer](Graph& gr, std::size_t self) {
                       const double dy = gr.grad(self)[0] / normalizer;
                       const Tensor p = kernels::softmax_channels(gr.value(li));
                       Tensor& dl = gr.grad_slot(li);
                       const Nchw sh = as_nchw(p.dims(), "neg_log_likelihood");
                       const std::size_t pl = sh.plane();
                       for (std::size_t n = 0; n < sh.n; ++n) {
                         const std::size_t base = n * sh.image();
                         for (std::size_t c = 0; c < sh.c; ++c)
                           for (std::size_t i = 0; i < pl; ++i)
                             dl[base + c * pl + i] += dy * p[base + c * pl + i];
                         for (std::size_t i = 0; i < pl; ++i)
                           dl[base + owned[n * pl + i] * pl + i] -= dy;
                       }
                     });
}

}  // namespace boxseg::ops
