#include "ilgnet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "ilgnet/sgd.hpp"

namespace ilgnet {

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw DataError("config: " + key + " expects a number, got '" + value + "'");
  }
}

std::uint64_t parse_count(const std::string& key, const std::string& value) {
  if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos) {
    throw DataError("config: " + key + " expects a non-negative integer, got '" + value + "'");
  }
  try {
    return std::stoull(value);
  } catch (const std::exception&) {
    throw DataError("config: " + key + " out of range: " + value);
  }
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item == "domain_adaptation") {
      for (auto& p : domain_adaptation_prefixes()) out.push_back(p);
    } else if (!item.empty()) {
      out.push_back(item);
    }
  }
  return out;
}

TrainConfig preset(double base_lr, std::uint64_t stepsize, std::uint64_t max_iter) {
  TrainConfig c;
  c.base_lr = base_lr;
  c.stepsize = stepsize;
  c.max_iter = max_iter;
  c.gamma = 0.96;
  c.momentum = 0.9;
  c.weight_decay = 0.0002;
  return c;
}

}  // namespace

void TrainConfig::validate() const {
  if (lr_policy != "step") throw DataError("config: lr_policy must be 'step', got '" + lr_policy + "'");
  if (stepsize < 1) throw DataError("config: stepsize must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw DataError("config: gamma must lie in (0, 1]");
  if (max_iter < 1) throw DataError("config: max_iter must be >= 1");
  if (batch_size < 1) throw DataError("config: batch_size must be >= 1");
  if (eval_interval < 1) throw DataError("config: eval_interval must be >= 1");
  if (!std::isfinite(base_lr) || base_lr < 0.0) throw DataError("config: base_lr must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw DataError("config: momentum must lie in [0, 1)");
  if (!std::isfinite(weight_decay) || weight_decay < 0.0) throw DataError("config: weight_decay must be >= 0");
  try {
    variant.validate();
  } catch (const ShapeError& e) {
    throw DataError(std::string("config: ") + e.what());
  }
}

TrainConfig TrainConfig::ava1_delta0() { return preset(0.0001, 100000, 475000); }
TrainConfig TrainConfig::ava1_delta1() { return preset(0.00001, 19000, 760000); }
TrainConfig TrainConfig::ava2() { return preset(0.00001, 13325, 533000); }

TrainConfig TrainConfig::parse(std::istream& in) {
  TrainConfig c;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key == "base_lr") c.base_lr = parse_real(key, value);
    else if (key == "lr_policy") c.lr_policy = value;
    else if (key == "stepsize") c.stepsize = parse_count(key, value);
    else if (key == "gamma") c.gamma = parse_real(key, value);
    else if (key == "max_iter") c.max_iter = parse_count(key, value);
    else if (key == "momentum") c.momentum = parse_real(key, value);
    else if (key == "weight_decay") c.weight_decay = parse_real(key, value);
    else if (key == "batch_size") c.batch_size = parse_count(key, value);
    else if (key == "seed") c.seed = parse_count(key, value);
    else if (key == "freeze_prefixes") c.freeze_prefixes = split_list(value);
    else if (key == "eval_interval") c.eval_interval = parse_count(key, value);
    else if (key == "variant") {
      try {
        c.variant.kind = parse_variant(value);
      } catch (const ShapeError& e) {
        throw DataError(std::string("config: ") + e.what());
      }
    } else if (key == "width_multiplier") c.variant.width_multiplier = parse_real(key, value);
    else if (key == "input_side") c.variant.input_side = parse_count(key, value);
    else throw DataError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

void TrainConfig::write(std::ostream& out) const {
  std::ostringstream s;
  s << std::setprecision(17);
  s << "base_lr=" << base_lr << '\n'
    << "lr_policy=" << lr_policy << '\n'
    << "stepsize=" << stepsize << '\n'
    << "gamma=" << gamma << '\n'
    << "max_iter=" << max_iter << '\n'
    << "momentum=" << momentum << '\n'
    << "weight_decay=" << weight_decay << '\n'
    << "batch_size=" << batch_size << '\n'
    << "seed=" << seed << '\n'
    << "freeze_prefixes=";
  for (std::size_t i = 0; i < freeze_prefixes.size(); ++i) s << (i ? "," : "") << freeze_prefixes[i];
  s << '\n'
    << "eval_interval=" << eval_interval << '\n'
    << "variant=" << variant_name(variant.kind) << '\n'
    << "width_multiplier=" << variant.width_multiplier << '\n'
    << "input_side=" << variant.input_side << '\n';
  out << s.str();
}

double lr_at(std::uint64_t iter, const TrainConfig& config) {
  return config.base_lr * std::pow(config.gamma, static_cast<double>(iter / config.stepsize));
}

std::vector<std::string> domain_adaptation_prefixes() { return {"stem/", "inc_a/", "inc_b/", "inc_c/"}; }

FreezeResult freeze(Network& net, std::span<const std::string> prefixes) {
  FreezeResult result;
  for (const auto& prefix : prefixes) {
    std::size_t matched = 0;
    for (auto& p : net.parameters()) {
      if (p.name.starts_with(prefix)) {
        p.frozen = true;
        ++matched;
      }
    }
    if (matched == 0) result.unmatched.push_back(prefix);
  }
  for (const auto& p : net.parameters()) {
    bool hit = std::any_of(prefixes.begin(), prefixes.end(), [&](const std::string& pre) { return p.name.starts_with(pre); });
    if (hit) ++result.frozen;
  }
  return result;
}

void Dataset::add(Tensor32 image, int label, std::string id) {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3) {
    throw ShapeError("dataset images must be (1, 3, S, S), got " + to_string(image.shape()));
  }
  if (!images.empty() && image.shape() != images.front().shape()) {
    throw ShapeError("dataset image shape " + to_string(image.shape()) + " differs from " +
                     to_string(images.front().shape()));
  }
  if (label != 0 && label != 1) throw DataError("label must be 0 or 1, got " + std::to_string(label));
  images.push_back(std::move(image));
  labels.push_back(label);
  ids.push_back(std::move(id));
}

Tensor32 Dataset::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ShapeError("empty batch");
  Shape shape = images.at(indices.front()).shape();
  std::size_t per = images[indices.front()].size();
  shape[0] = indices.size();
  std::vector<float> data;
  data.reserve(per * indices.size());
  for (auto i : indices) {
    const auto& img = images.at(i);
    data.insert(data.end(), img.data().begin(), img.data().end());
  }
  return Tensor32(std::move(shape), std::move(data));
}

void MetricsLog::write_csv(std::ostream& out) const {
  std::ostringstream s;
  s << "iter,lr,loss,accuracy,wall_ms\n";
  s << std::setprecision(9);
  for (const auto& r : rows) {
    s << r.iter << ',' << r.lr << ',' << r.loss << ',';
    if (r.accuracy) s << *r.accuracy;
    s << ',' << std::fixed << std::setprecision(3) << r.wall_ms << std::defaultfloat << std::setprecision(9) << '\n';
  }
  out << s.str();
}

TrainResult train(Network& net, const Dataset& train_set, const TrainConfig& config, const Dataset* eval_set) {
  config.validate();
  if (train_set.size() == 0) throw DataError("training set is empty");
  if (!config.freeze_prefixes.empty()) freeze(net, config.freeze_prefixes);

  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();  // forces a shuffle on the first step

  TrainResult result;
  result.iteration_loss.reserve(config.max_iter);
  double interval_sum = 0.0;
  std::size_t interval_count = 0;
  double epoch_sum = 0.0;
  std::size_t epoch_count = 0;

  for (std::uint64_t iter = 0; iter < config.max_iter; ++iter) {
    if (cursor >= order.size()) {
      if (epoch_count > 0) {
        result.epoch_mean_loss.push_back(epoch_sum / static_cast<double>(epoch_count));
        epoch_sum = 0.0;
        epoch_count = 0;
      }
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    std::size_t end = std::min(order.size(), cursor + config.batch_size);
    std::span<const std::size_t> idx(order.data() + cursor, end - cursor);
    cursor = end;

    Tensor32 x = train_set.batch(idx);
    std::vector<int> labels;
    labels.reserve(idx.size());
    for (auto i : idx) labels.push_back(train_set.labels[i]);

    auto pass = net.forward_train(x);
    auto xent = softmax_xent_forward(pass.logits(), std::span<const int>(labels));
    if (!std::isfinite(xent.mean_loss)) {
      throw NumericError("non-finite training loss at iteration " + std::to_string(net.iteration + iter));
    }
    net.backward(pass, softmax_xent_backward(xent.probabilities, std::span<const int>(labels)));
    const double lr = lr_at(iter, config);
    sgd_step(net.parameters(), SgdHyper{lr, config.momentum, config.weight_decay});

    result.iteration_loss.push_back(xent.mean_loss);
    interval_sum += xent.mean_loss;
    ++interval_count;
    epoch_sum += xent.mean_loss;
    ++epoch_count;

    if ((iter + 1) % config.eval_interval == 0) {
      MetricsRow row;
      row.iter = net.iteration + iter + 1;
      row.lr = lr;
      row.loss = interval_sum / static_cast<double>(interval_count);
      if (eval_set && eval_set->size() > 0) row.accuracy = evaluate(net, *eval_set).accuracy;
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      result.log.rows.push_back(row);
      interval_sum = 0.0;
      interval_count = 0;
    }
  }
  if (epoch_count > 0) result.epoch_mean_loss.push_back(epoch_sum / static_cast<double>(epoch_count));
  net.iteration += config.max_iter;
  return result;
}

Evaluation evaluate(const Network& net, const Dataset& examples, std::size_t batch_size) {
  if (examples.size() == 0) throw DataError("evaluation set is empty");
  if (batch_size == 0) batch_size = 1;
  Evaluation ev;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) idx.push_back(i);
    Tensor32 probs = net.classify(examples.batch(idx));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      int truth = examples.labels[idx[k]];
      int pred = predicted_class(probs[k * 2], probs[k * 2 + 1]);
      ++ev.confusion[truth][pred];
    }
  }
  ev.total = examples.size();
  ev.accuracy = static_cast<double>(ev.confusion[0][0] + ev.confusion[1][1]) / static_cast<double>(ev.total);
  return ev;
}

}  // namespace ilgnet
