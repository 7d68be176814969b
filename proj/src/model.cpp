#include "swlora/model.hpp"

#include <cmath>
#include <stdexcept>

namespace swlora {

const char* to_string(Mode m) {
  switch (m) {
    case Mode::full_rank: return "full_rank";
    case Mode::lora: return "lora";
    case Mode::switchlora: return "switchlora";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "full_rank") return Mode::full_rank;
  if (s == "lora") return Mode::lora;
  if (s == "switchlora") return Mode::switchlora;
  throw std::invalid_argument("unknown mode '" + s + "'");
}

const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::embedding: return "embedding";
    case LayerKind::lora_linear: return "lora_linear";
    case LayerKind::relu: return "relu";
    case LayerKind::plain_linear: return "plain_linear";
  }
  return "?";
}

LayerKind parse_layer_kind(const std::string& s) {
  if (s == "embedding") return LayerKind::embedding;
  if (s == "lora_linear") return LayerKind::lora_linear;
  if (s == "relu") return LayerKind::relu;
  if (s == "plain_linear") return LayerKind::plain_linear;
  throw std::invalid_argument("unknown layer kind '" + s + "'");
}

Matrix LinearUnit::effective_weight() const { return adapted ? lin.effective_weight() : lin.W; }

Matrix LinearUnit::forward(const Matrix& x) const { return adapted ? swlora::forward(lin, x) : matmul(lin.W, x); }

std::size_t LinearUnit::trainable_parameters() const {
  return adapted ? rank * (m() + n()) : m() * n();
}

Matrix ToyModel::embed(const TokenBatch& batch) const {
  if (!embedding) throw std::logic_error("embed: model has no embedding layer");
  const std::size_t d = embedding->table.cols();
  const std::size_t ctx = batch.contexts.empty() ? 0 : batch.contexts.front().size();
  Matrix out(ctx * d, batch.contexts.size());
  for (std::size_t t = 0; t < batch.contexts.size(); ++t) {
    for (std::size_t p = 0; p < ctx; ++p) {
      const auto row = embedding->table.row(batch.contexts[t][p]);
      for (std::size_t k = 0; k < d; ++k) out(p * d + k, t) = row[k];
    }
  }
  return out;
}

ForwardTrace ToyModel::forward(const Matrix& x) const {
  ForwardTrace trace;
  Matrix h = x;
  std::size_t li = 0;
  for (LayerKind kind : layers) {
    if (kind == LayerKind::embedding) continue;
    trace.inputs.push_back(h);
    if (kind == LayerKind::relu) {
      for (auto& v : h.data()) v = v > 0.0 ? v : 0.0;
    } else {
      h = linears.at(li++).forward(h);
    }
  }
  trace.output = std::move(h);
  return trace;
}

std::size_t ToyModel::trainable_parameters() const {
  std::size_t total = embedding ? embedding->table.size() : 0;
  for (const auto& l : linears) total += l.trainable_parameters();
  return total;
}

LossResult mse_loss(const Matrix& pred, const Matrix& target) {
  if (!pred.same_shape(target)) throw DimensionError("mse_loss: shape mismatch");
  LossResult r{0.0, Matrix(pred.rows(), pred.cols())};
  const double inv = 1.0 / static_cast<double>(pred.size());
  auto p = pred.data();
  auto t = target.data();
  auto g = r.grad.data();
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double d = p[k] - t[k];
    r.loss += d * d;
    g[k] = 2.0 * d * inv;
  }
  r.loss *= inv;
  return r;
}

LossResult cross_entropy_loss(const Matrix& logits, const std::vector<std::uint8_t>& targets) {
  if (targets.size() != logits.cols()) throw DimensionError("cross_entropy_loss: batch mismatch");
  LossResult r{0.0, Matrix(logits.rows(), logits.cols())};
  const double inv = 1.0 / static_cast<double>(logits.cols());
  for (std::size_t t = 0; t < logits.cols(); ++t) {
    double mx = -INFINITY;
    for (std::size_t v = 0; v < logits.rows(); ++v) mx = std::max(mx, logits(v, t));
    double z = 0.0;
    for (std::size_t v = 0; v < logits.rows(); ++v) z += std::exp(logits(v, t) - mx);
    const double log_z = mx + std::log(z);
    if (targets[t] >= logits.rows()) throw std::out_of_range("cross_entropy_loss: target outside vocabulary");
    r.loss += log_z - logits(targets[t], t);
    for (std::size_t v = 0; v < logits.rows(); ++v) r.grad(v, t) = std::exp(logits(v, t) - log_z) * inv;
    r.grad(targets[t], t) -= inv;
  }
  r.loss *= inv;
  return r;
}

ModelGrads backward(const ToyModel& model, const ForwardTrace& trace, const Matrix& upstream,
                    const TokenBatch* tokens) {
  ModelGrads g;
  g.grad_W.resize(model.linears.size());
  g.grad_B.resize(model.linears.size());
  g.grad_A.resize(model.linears.size());

  Matrix up = upstream;
  std::size_t slot = trace.inputs.size();
  std::size_t li = model.linears.size();
  for (auto it = model.layers.rbegin(); it != model.layers.rend(); ++it) {
    if (*it == LayerKind::embedding) continue;
    const Matrix& in = trace.inputs.at(--slot);
    if (*it == LayerKind::relu) {
      auto u = up.data();
      auto x = in.data();
      for (std::size_t k = 0; k < u.size(); ++k) if (x[k] <= 0.0) u[k] = 0.0;
      continue;
    }
    const LinearUnit& unit = model.linears.at(--li);
    if (unit.adapted) {
      GradBundle gb = swlora::backward(unit.lin, in, up);
      g.grad_B[li] = std::move(gb.grad_B);
      g.grad_A[li] = std::move(gb.grad_A);
      up = std::move(gb.grad_x);
    } else {
      g.grad_W[li] = matmul(up, transpose(in));
      up = matmul(transpose(unit.lin.W), up);
    }
  }

  if (model.embedding && tokens) {
    const Matrix& table = model.embedding->table;
    const std::size_t d = table.cols();
    Matrix ge(table.rows(), d);
    for (std::size_t t = 0; t < tokens->contexts.size(); ++t) {
      const auto& ctx = tokens->contexts[t];
      for (std::size_t p = 0; p < ctx.size(); ++p) {
        auto row = ge.row(ctx[p]);
        for (std::size_t k = 0; k < d; ++k) row[k] += up(p * d + k, t);
      }
    }
    g.grad_embedding = std::move(ge);
  }
  return g;
}

}  // namespace swlora
