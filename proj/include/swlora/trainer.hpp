#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "swlora/config.hpp"
#include "swlora/data.hpp"
#include "swlora/model.hpp"
#include "swlora/schedule.hpp"

namespace swlora {

enum class DatasetKind { synthetic_regression, char_lm };
enum class LrSchedule { constant, cosine };

/// Resolved training settings ("auto" values already filled in).
struct TrainConfig {
  Mode mode = Mode::switchlora;
  std::uint64_t total_steps = 2000;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::uint64_t eval_every = 100;
  std::uint64_t warmup_steps = 0;

  AdamConfig adam;
  LrSchedule lr_schedule = LrSchedule::constant;
  std::uint64_t lr_warmup = 100;
  double min_lr_ratio = 0.1;
  double grad_clip = 0.0;

  std::size_t rank = 2;
  std::optional<double> alpha;  // unset: alpha = r
  InitScheme init = InitScheme::switchlora;
  std::optional<double> gain;  // unset: per-layer default

  double interval0 = 40.0;
  double ratio = 0.1;
  SelectionPolicy policy = SelectionPolicy::sequential;
  std::size_t freeze_steps = 5;
  Tier tier = Tier::resident;
  std::filesystem::path offload_dir;

  DatasetKind dataset = DatasetKind::synthetic_regression;
  std::size_t dim = 32;
  std::filesystem::path data_path;
  std::size_t window = 16;
  std::size_t eval_size = 512;
  std::size_t embed_dim = 8;
  std::size_t hidden = 64;

  static TrainConfig from_config(const Config& c);
  /// Inverse of from_config; every number is written with round-trip precision.
  Config to_config() const;
  /// Learning rate used when optim.lr = auto.
  static double default_lr(Mode mode);
};

struct MetricsRecord {
  std::uint64_t step = 0;
  double train_loss = 0.0;  // mean over steps since the previous record
  double eval_loss = 0.0;
  std::optional<double> perplexity;  // exp(eval_loss) for the char task
  std::size_t switches_this_step = 0;
  std::size_t frozen_count = 0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

std::string to_json_line(const MetricsRecord& r);
MetricsRecord metrics_from_json_line(const std::string& line);
std::vector<MetricsRecord> read_metrics(std::istream& is);

/// Held-out data: either regression pairs or token windows.
struct EvalSet {
  Matrix x, y;
  std::optional<TokenBatch> tokens;
  std::size_t size() const;
};

struct EvalResult {
  double loss = 0.0;
  std::optional<double> perplexity;
};

/// Mean loss over the set; perplexity is reported for cross-entropy models.
EvalResult evaluate(const ToyModel& model, const EvalSet& set);

/// Builds the model for a config, drawing weights from the seeded streams.
ToyModel build_model(const TrainConfig& cfg, std::size_t input_dim);

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  const TrainConfig& config() const { return cfg_; }
  const ToyModel& model() const { return model_; }
  ToyModel& mutable_model() { return model_; }
  FreezeRegistry& freezes() { return freeze_; }
  const EvalSet& eval_set() const { return eval_; }
  std::uint64_t step() const { return step_; }
  std::size_t last_switch_count() const { return last_switches_; }

  /// Switch events are appended here as JSON lines when set.
  void set_switch_log(std::ostream* os) { switch_log_ = os; }

  /// One full step: forward/backward, optimizer update honoring freezes,
  /// switch phase, freeze tick. Returns the batch training loss.
  double train_step();
  /// Runs the switch phase alone at the current step (exposed for tests).
  std::size_t switch_phase();

  /// Steps until total_steps, emitting a record every eval_every steps and at the end.
  std::vector<MetricsRecord> run(const std::function<void(const MetricsRecord&)>& sink = {});
  MetricsRecord record_now();
  EvalResult evaluate_now() const { return evaluate(model_, eval_); }

  /// Model output on a fixed probe batch drawn from the held-out data.
  Matrix probe_output(std::size_t count = 16) const;

  void save_checkpoint(const std::filesystem::path& dir) const;
  static Trainer load_checkpoint(const std::filesystem::path& dir);

  double current_lr() const;

 private:
  struct Batch {
    Matrix x, y;
    std::optional<TokenBatch> tokens;
  };

  void load_data();
  Batch next_batch();
  void enable_adapters();
  void apply_gradients(const ModelGrads& g);

  TrainConfig cfg_;
  ToyModel model_;
  FreezeRegistry freeze_;
  std::optional<RegressionTask> regression_;
  std::optional<CharDataset> text_;
  EvalSet eval_;
  Rng data_rng_;
  std::uint64_t step_ = 0;
  std::size_t last_switches_ = 0;
  double loss_accum_ = 0.0;
  std::uint64_t loss_count_ = 0;
  double theta_ = 0.0;
  std::vector<Rng> schedule_rngs_;
  std::ostream* switch_log_ = nullptr;
};

/// Trains from scratch and returns the metrics stream.
std::vector<MetricsRecord> train(const TrainConfig& cfg, const std::function<void(const MetricsRecord&)>& sink = {});

}  // namespace swlora
