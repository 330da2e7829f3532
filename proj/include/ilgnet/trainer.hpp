#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ilgnet/network.hpp"

namespace ilgnet {

// Solver settings; defaults are the AVA1 (delta = 0) Caffe solver.
struct TrainConfig {
  double base_lr = 0.0001;
  std::string lr_policy = "step";
  std::uint64_t stepsize = 100000;
  double gamma = 0.96;
  std::uint64_t max_iter = 475000;
  double momentum = 0.9;
  double weight_decay = 0.0002;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  std::vector<std::string> freeze_prefixes;
  std::uint64_t eval_interval = 1000;
  ArchVariant variant;

  void validate() const;

  static TrainConfig ava1_delta0();
  static TrainConfig ava1_delta1();
  static TrainConfig ava2();

  // key=value lines using the field names above. `freeze_prefixes` is a comma
  // list; the value `domain_adaptation` expands to the backbone preset.
  // Blank lines and '#' comments are ignored. Throws DataError.
  static TrainConfig parse(std::istream& in);
  void write(std::ostream& out) const;
};

// base_lr * gamma ^ floor(iter / stepsize)
double lr_at(std::uint64_t iter, const TrainConfig& config);

// Stem and all inception modules; leaves the feature projections and the
// classifier trainable.
std::vector<std::string> domain_adaptation_prefixes();

struct FreezeResult {
  std::size_t frozen = 0;                 // parameters newly or already frozen by these prefixes
  std::vector<std::string> unmatched;     // prefixes that matched no parameter
};

FreezeResult freeze(Network& net, std::span<const std::string> prefixes);

// Preprocessed examples, each image (1, 3, S, S).
struct Dataset {
  std::vector<Tensor32> images;
  std::vector<int> labels;
  std::vector<std::string> ids;

  std::size_t size() const noexcept { return images.size(); }
  void add(Tensor32 image, int label, std::string id = {});
  Tensor32 batch(std::span<const std::size_t> indices) const;
};

struct MetricsRow {
  std::uint64_t iter = 0;  // iterations completed
  double lr = 0.0;
  double loss = 0.0;       // mean training loss since the previous row
  std::optional<double> accuracy;
  double wall_ms = 0.0;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;
  // CSV `iter,lr,loss,accuracy,wall_ms`, with a header line.
  void write_csv(std::ostream& out) const;
};

struct TrainResult {
  MetricsLog log;
  std::vector<double> iteration_loss;
  std::vector<double> epoch_mean_loss;  // the last entry may cover a partial epoch
};

// Mini-batch momentum SGD with the step schedule; batches come from a seeded
// reshuffle every epoch, last partial batch kept. When `eval_set` is given the
// log rows carry its accuracy. Throws NumericError on a non-finite loss.
TrainResult train(Network& net, const Dataset& train_set, const TrainConfig& config,
                  const Dataset* eval_set = nullptr);

struct Evaluation {
  double accuracy = 0.0;
  // confusion[true_label][predicted_label]
  std::array<std::array<std::size_t, 2>, 2> confusion{};
  std::size_t total = 0;
};

// Inference mode; predicts good only when p(good) > p(bad). Single-image
// batches by default so results cannot depend on batch composition.
Evaluation evaluate(const Network& net, const Dataset& examples, std::size_t batch_size = 1);

inline int predicted_class(float p_bad, float p_good) { return p_good > p_bad ? 1 : 0; }

}  // namespace ilgnet
