#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "swlora/data.hpp"
#include "swlora/lora.hpp"
#include "swlora/optim.hpp"
#include "swlora/switchbox.hpp"

namespace swlora {

enum class Mode { full_rank, lora, switchlora };
enum class LossKind { cross_entropy, mse };
enum class LayerKind { embedding, lora_linear, relu, plain_linear };

const char* to_string(Mode m);
Mode parse_mode(const std::string& s);
const char* to_string(LayerKind k);
LayerKind parse_layer_kind(const std::string& s);

/// A linear layer of the toy model. Before adapters are enabled (full-rank
/// mode or warm-up) W itself is trained; afterwards W is frozen and only the
/// adapter pair is trained.
struct LinearUnit {
  LoraLinear lin;  // B and A are empty until adapters are enabled
  bool adaptable = true;
  bool adapted = false;
  double gain = 1.0;
  std::size_t rank = 0;
  double alpha = 0.0;

  VectorStepState w_state;
  AdapterOptState adapter_state;
  std::optional<CandidateStore> store;
  /// Effective weight when adapters were enabled (or at step 0); cumulative
  /// update rank is measured against it.
  Matrix reference;

  std::size_t m() const { return lin.W.rows(); }
  std::size_t n() const { return lin.W.cols(); }
  Matrix effective_weight() const;
  Matrix forward(const Matrix& x) const;
  std::size_t trainable_parameters() const;
};

struct Embedding {
  Matrix table;  // vocab x dim
  VectorStepState state;
};

struct ForwardTrace {
  std::vector<Matrix> inputs;  // input to each non-embedding layer
  Matrix output;
};

class ToyModel {
 public:
  std::vector<LayerKind> layers;
  std::optional<Embedding> embedding;
  std::vector<LinearUnit> linears;  // in layer order
  LossKind loss = LossKind::mse;
  Mode mode = Mode::switchlora;

  /// Concatenated context embeddings, (context * dim) x batch.
  Matrix embed(const TokenBatch& batch) const;
  ForwardTrace forward(const Matrix& x) const;
  std::size_t trainable_parameters() const;
};

struct LossResult {
  double loss = 0.0;
  Matrix grad;  // dL/d(output)
};

/// Mean over every entry of (pred - target)^2.
LossResult mse_loss(const Matrix& pred, const Matrix& target);
/// Mean over the batch of -log softmax(logits)[target], in nats.
LossResult cross_entropy_loss(const Matrix& logits, const std::vector<std::uint8_t>& targets);

struct ModelGrads {
  std::vector<Matrix> grad_W;  // per linear; empty when adapted
  std::vector<Matrix> grad_B;
  std::vector<Matrix> grad_A;
  std::optional<Matrix> grad_embedding;
};

ModelGrads backward(const ToyModel& model, const ForwardTrace& trace, const Matrix& upstream,
                    const TokenBatch* tokens);

}  // namespace swlora
