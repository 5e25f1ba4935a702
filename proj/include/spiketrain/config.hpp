#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "spiketrain/network.hpp"
#include "spiketrain/optimize.hpp"
#include "spiketrain/surrogate.hpp"
#include "spiketrain/tensor.hpp"

// Run configuration: a flat `key = value` list plus one `net { ... }` block
// describing the layer pipeline. print_config emits a canonical form that
// parses back to the identical configuration, which is what checkpoints
// embed.

namespace spiketrain {

struct RunConfig {
  // paths
  std::string data;
  std::string out;
  std::string graph;
  std::string checkpoint;
  std::string raw;
  std::string labels;
  std::string events;
  std::string metrics;

  std::uint64_t seed = 0;

  // network
  Shape input_shape;
  std::vector<Layer> layers;  // as declared; shapes may be left for inference
  ActivationDesc activation = {"superspike", 25.0, 0.0};
  std::string beta_mode = "per_neuron";  // per_neuron|learnable_scalar|fixed
  double fixed_beta = 0.5;
  double threshold = 1.0;

  // training
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::string optimizer = "adam";  // adam|sgd
  double momentum = 0.9;
  std::string loss = "integral_ce";  // integral_ce|rate_mse
  double rate_hi = 0.9;
  double rate_lo = 0.1;
  double f_min = 0.0;
  double f_max = 1.0;
  double lambda_low = 0.0;
  double lambda_high = 0.0;
  std::size_t unroll = 32;
  std::int64_t max_shift = 0;
  std::vector<long> shift_axes;

  // synthetic data / rasterization
  std::size_t classes = 3;
  std::size_t examples = 600;
  std::size_t steps = 64;

  // bench
  std::size_t trials = 5;
  std::size_t warmup = 1;
  std::vector<std::size_t> bench_batch_sizes = {64, 128, 256};
  std::vector<std::size_t> bench_unrolls = {32};

  // interchange
  double dt = 1.0;
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string fmt_dims(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out;
}

inline std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> toks;
  std::istringstream is(line);
  std::string t;
  while (is >> t) toks.push_back(t);
  return toks;
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

inline ConfigError cfg_error(std::size_t line_no, const std::string& what) {
  return ConfigError("line " + std::to_string(line_no) + ": " + what);
}

inline Shape parse_dims(const std::string& s, std::size_t line_no) {
  Shape dims;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t next = s.find('x', pos);
    const std::string part =
        s.substr(pos, next == std::string::npos ? next : next - pos);
    std::size_t value = 0;
    auto res = std::from_chars(part.data(), part.data() + part.size(), value);
    if (res.ec != std::errc() || res.ptr != part.data() + part.size() ||
        value == 0)
      throw cfg_error(line_no, "bad dimension '" + part + "'");
    dims.push_back(value);
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  if (dims.empty()) throw cfg_error(line_no, "empty dimension list");
  return dims;
}

inline double parse_double(const std::string& s, std::size_t line_no) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw cfg_error(line_no, "bad number '" + s + "'");
  return v;
}

inline std::int64_t parse_int(const std::string& s, std::size_t line_no) {
  std::int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw cfg_error(line_no, "bad integer '" + s + "'");
  return v;
}

inline std::size_t parse_size(const std::string& s, std::size_t line_no) {
  const std::int64_t v = parse_int(s, line_no);
  if (v < 0) throw cfg_error(line_no, "expected non-negative integer");
  return std::size_t(v);
}

template <typename V, typename Parse>
std::vector<V> parse_list(const std::string& s, std::size_t line_no,
                          Parse parse_one) {
  std::vector<V> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t next = s.find(',', pos);
    const std::string part = trim(
        s.substr(pos, next == std::string::npos ? next : next - pos));
    if (!part.empty()) out.push_back(parse_one(part, line_no));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

inline Layer parse_layer_line(const std::vector<std::string>& toks,
                              std::size_t line_no, const RunConfig& cfg) {
  const std::string& kind = toks[0];
  if (kind == "linear") {
    if (toks.size() < 2) throw cfg_error(line_no, "linear needs a width");
    LinearLayer l;
    l.out = parse_size(toks[1], line_no);
    l.bias = true;
    for (std::size_t i = 2; i < toks.size(); ++i) {
      if (toks[i] == "nobias")
        l.bias = false;
      else
        throw cfg_error(line_no, "unknown linear option '" + toks[i] + "'");
    }
    if (l.out == 0) throw cfg_error(line_no, "linear width must be positive");
    return l;
  }
  if (kind == "conv") {
    if (toks.size() < 3)
      throw cfg_error(line_no, "conv needs filters and a kernel size");
    Conv2dLayer c;
    c.filters = parse_size(toks[1], line_no);
    Shape k = parse_dims(toks[2], line_no);
    if (k.size() == 1) k.push_back(k[0]);
    if (k.size() != 2) throw cfg_error(line_no, "kernel must be KhxKw");
    c.kh = k[0];
    c.kw = k[1];
    for (std::size_t i = 3; i < toks.size(); ++i) {
      if (toks[i] == "stride") {
        if (++i >= toks.size())
          throw cfg_error(line_no, "stride needs a value");
        Shape s = parse_dims(toks[i], line_no);
        if (s.size() == 1) s.push_back(s[0]);
        if (s.size() != 2) throw cfg_error(line_no, "stride must be ShxSw");
        c.sh = s[0];
        c.sw = s[1];
      } else if (toks[i] == "padding") {
        if (++i >= toks.size())
          throw cfg_error(line_no, "padding needs same|valid");
        if (toks[i] == "same")
          c.padding = Padding::Same;
        else if (toks[i] == "valid")
          c.padding = Padding::Valid;
        else
          throw cfg_error(line_no, "padding must be same|valid");
      } else if (toks[i] == "nobias") {
        c.bias = false;
      } else {
        throw cfg_error(line_no, "unknown conv option '" + toks[i] + "'");
      }
    }
    if (c.filters == 0) throw cfg_error(line_no, "conv needs filters > 0");
    return c;
  }
  if (kind == "maxpool") {
    if (toks.size() != 2) throw cfg_error(line_no, "maxpool needs a window");
    MaxPoolLayer m;
    Shape w = parse_dims(toks[1], line_no);
    if (w.size() == 1) w.push_back(w[0]);
    if (w.size() != 2) throw cfg_error(line_no, "window must be WhxWw");
    m.wh = w[0];
    m.ww = w[1];
    return m;
  }
  if (kind == "flatten") {
    if (toks.size() != 1) throw cfg_error(line_no, "flatten takes nothing");
    return FlattenLayer{};
  }
  if (kind == "lif") {
    LIFLayer l;
    if (toks.size() == 2) l.shape = parse_dims(toks[1], line_no);
    else if (toks.size() > 2)
      throw cfg_error(line_no, "lif takes at most a shape");
    l.activation = cfg.activation;
    l.fixed_beta = cfg.fixed_beta;
    l.threshold = cfg.threshold;
    if (cfg.beta_mode == "per_neuron") l.beta_mode = BetaMode::PerNeuron;
    else if (cfg.beta_mode == "learnable_scalar")
      l.beta_mode = BetaMode::LearnableScalar;
    else if (cfg.beta_mode == "fixed") l.beta_mode = BetaMode::Fixed;
    else throw cfg_error(line_no, "beta_mode must be per_neuron|learnable_scalar|fixed");
    return l;
  }
  if (kind == "li") {
    LILayer l;
    if (toks.size() == 2) l.shape = parse_dims(toks[1], line_no);
    else if (toks.size() > 2)
      throw cfg_error(line_no, "li takes at most a shape");
    l.fixed_beta = cfg.fixed_beta;
    if (cfg.beta_mode == "per_neuron") l.beta_mode = BetaMode::PerNeuron;
    else if (cfg.beta_mode == "learnable_scalar")
      l.beta_mode = BetaMode::LearnableScalar;
    else if (cfg.beta_mode == "fixed") l.beta_mode = BetaMode::Fixed;
    else throw cfg_error(line_no, "beta_mode must be per_neuron|learnable_scalar|fixed");
    return l;
  }
  if (kind == "monitor") {
    if (toks.size() != 1) throw cfg_error(line_no, "monitor takes nothing");
    return MonitorLayer{};
  }
  throw cfg_error(line_no, "unknown layer '" + kind + "'");
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text);

// Canonical form: every key in a fixed order, then the net block. Doubles
// print with the shortest representation that parses back exactly.
inline std::string print_config(const RunConfig& cfg) {
  using detail::fmt_dims;
  using detail::fmt_double;
  std::ostringstream o;
  auto kv = [&o](const char* key, const std::string& value) {
    o << key << " = " << value << "\n";
  };
  kv("data", cfg.data);
  kv("out", cfg.out);
  kv("graph", cfg.graph);
  kv("checkpoint", cfg.checkpoint);
  kv("raw", cfg.raw);
  kv("labels", cfg.labels);
  kv("events", cfg.events);
  kv("metrics", cfg.metrics);
  kv("seed", std::to_string(cfg.seed));
  kv("input", cfg.input_shape.empty() ? "" : fmt_dims(cfg.input_shape));
  kv("activation", cfg.activation.name);
  kv("slope", fmt_double(cfg.activation.slope));
  kv("aux", fmt_double(cfg.activation.aux));
  kv("beta_mode", cfg.beta_mode);
  kv("fixed_beta", fmt_double(cfg.fixed_beta));
  kv("threshold", fmt_double(cfg.threshold));
  kv("epochs", std::to_string(cfg.epochs));
  kv("batch_size", std::to_string(cfg.batch_size));
  kv("lr", fmt_double(cfg.lr));
  kv("optimizer", cfg.optimizer);
  kv("momentum", fmt_double(cfg.momentum));
  kv("loss", cfg.loss);
  kv("rate_hi", fmt_double(cfg.rate_hi));
  kv("rate_lo", fmt_double(cfg.rate_lo));
  kv("f_min", fmt_double(cfg.f_min));
  kv("f_max", fmt_double(cfg.f_max));
  kv("lambda_low", fmt_double(cfg.lambda_low));
  kv("lambda_high", fmt_double(cfg.lambda_high));
  kv("unroll", std::to_string(cfg.unroll));
  kv("max_shift", std::to_string(cfg.max_shift));
  {
    std::string axes;
    for (std::size_t i = 0; i < cfg.shift_axes.size(); ++i) {
      if (i) axes += ",";
      axes += std::to_string(cfg.shift_axes[i]);
    }
    kv("shift_axes", axes);
  }
  kv("classes", std::to_string(cfg.classes));
  kv("examples", std::to_string(cfg.examples));
  kv("steps", std::to_string(cfg.steps));
  kv("trials", std::to_string(cfg.trials));
  kv("warmup", std::to_string(cfg.warmup));
  {
    std::string bs;
    for (std::size_t i = 0; i < cfg.bench_batch_sizes.size(); ++i) {
      if (i) bs += ",";
      bs += std::to_string(cfg.bench_batch_sizes[i]);
    }
    kv("bench_batch_sizes", bs);
  }
  {
    std::string us;
    for (std::size_t i = 0; i < cfg.bench_unrolls.size(); ++i) {
      if (i) us += ",";
      us += std::to_string(cfg.bench_unrolls[i]);
    }
    kv("bench_unrolls", us);
  }
  kv("dt", fmt_double(cfg.dt));
  o << "net {\n";
  for (const Layer& layer : cfg.layers) {
    o << "  ";
    if (const auto* l = std::get_if<LinearLayer>(&layer)) {
      o << "linear " << l->out;
      if (!l->bias) o << " nobias";
    } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
      o << "conv " << c->filters << " " << c->kh << "x" << c->kw << " stride "
        << c->sh << "x" << c->sw << " padding "
        << (c->padding == Padding::Same ? "same" : "valid");
      if (!c->bias) o << " nobias";
    } else if (const auto* m = std::get_if<MaxPoolLayer>(&layer)) {
      o << "maxpool " << m->wh << "x" << m->ww;
    } else if (std::holds_alternative<FlattenLayer>(layer)) {
      o << "flatten";
    } else if (const auto* lif = std::get_if<LIFLayer>(&layer)) {
      o << "lif";
      if (!lif->shape.empty()) o << " " << fmt_dims(lif->shape);
    } else if (const auto* li = std::get_if<LILayer>(&layer)) {
      o << "li";
      if (!li->shape.empty()) o << " " << fmt_dims(li->shape);
    } else {
      o << "monitor";
    }
    o << "\n";
  }
  o << "}\n";
  return o.str();
}

inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string raw_line;
  std::size_t line_no = 0;
  bool in_net = false;
  bool net_seen = false;
  std::vector<std::pair<std::vector<std::string>, std::size_t>> layer_lines;
  bool slope_seen = false, aux_seen = false;
  while (std::getline(in, raw_line)) {
    ++line_no;
    std::string line = raw_line;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (in_net) {
      if (line == "}") {
        in_net = false;
        continue;
      }
      layer_lines.emplace_back(detail::tokenize(line), line_no);
      continue;
    }
    if (line == "net {" || line == "net{") {
      if (net_seen) throw detail::cfg_error(line_no, "duplicate net block");
      in_net = true;
      net_seen = true;
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw detail::cfg_error(line_no, "expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key == "data") cfg.data = value;
    else if (key == "out") cfg.out = value;
    else if (key == "graph") cfg.graph = value;
    else if (key == "checkpoint") cfg.checkpoint = value;
    else if (key == "raw") cfg.raw = value;
    else if (key == "labels") cfg.labels = value;
    else if (key == "events") cfg.events = value;
    else if (key == "metrics") cfg.metrics = value;
    else if (key == "seed")
      cfg.seed = std::uint64_t(detail::parse_int(value, line_no));
    else if (key == "input")
      cfg.input_shape = value.empty() ? Shape{}
                                      : detail::parse_dims(value, line_no);
    else if (key == "activation") cfg.activation.name = value;
    else if (key == "slope") {
      cfg.activation.slope = detail::parse_double(value, line_no);
      slope_seen = true;
    } else if (key == "aux") {
      cfg.activation.aux = detail::parse_double(value, line_no);
      aux_seen = true;
    }
    else if (key == "beta_mode") cfg.beta_mode = value;
    else if (key == "fixed_beta")
      cfg.fixed_beta = detail::parse_double(value, line_no);
    else if (key == "threshold")
      cfg.threshold = detail::parse_double(value, line_no);
    else if (key == "epochs") cfg.epochs = detail::parse_size(value, line_no);
    else if (key == "batch_size")
      cfg.batch_size = detail::parse_size(value, line_no);
    else if (key == "lr") cfg.lr = detail::parse_double(value, line_no);
    else if (key == "optimizer") cfg.optimizer = value;
    else if (key == "momentum")
      cfg.momentum = detail::parse_double(value, line_no);
    else if (key == "loss") cfg.loss = value;
    else if (key == "rate_hi")
      cfg.rate_hi = detail::parse_double(value, line_no);
    else if (key == "rate_lo")
      cfg.rate_lo = detail::parse_double(value, line_no);
    else if (key == "f_min") cfg.f_min = detail::parse_double(value, line_no);
    else if (key == "f_max") cfg.f_max = detail::parse_double(value, line_no);
    else if (key == "lambda_low")
      cfg.lambda_low = detail::parse_double(value, line_no);
    else if (key == "lambda_high")
      cfg.lambda_high = detail::parse_double(value, line_no);
    else if (key == "unroll") {
      cfg.unroll = detail::parse_size(value, line_no);
      if (cfg.unroll == 0)
        throw detail::cfg_error(line_no, "unroll must be >= 1");
    } else if (key == "max_shift")
      cfg.max_shift = detail::parse_int(value, line_no);
    else if (key == "shift_axes")
      cfg.shift_axes = detail::parse_list<long>(
          value, line_no, [](const std::string& s, std::size_t ln) {
            return long(detail::parse_int(s, ln));
          });
    else if (key == "classes")
      cfg.classes = detail::parse_size(value, line_no);
    else if (key == "examples")
      cfg.examples = detail::parse_size(value, line_no);
    else if (key == "steps") cfg.steps = detail::parse_size(value, line_no);
    else if (key == "trials") cfg.trials = detail::parse_size(value, line_no);
    else if (key == "warmup") cfg.warmup = detail::parse_size(value, line_no);
    else if (key == "bench_batch_sizes")
      cfg.bench_batch_sizes = detail::parse_list<std::size_t>(
          value, line_no, [](const std::string& s, std::size_t ln) {
            return detail::parse_size(s, ln);
          });
    else if (key == "bench_unrolls")
      cfg.bench_unrolls = detail::parse_list<std::size_t>(
          value, line_no, [](const std::string& s, std::size_t ln) {
            return detail::parse_size(s, ln);
          });
    else if (key == "dt") cfg.dt = detail::parse_double(value, line_no);
    else throw detail::cfg_error(line_no, "unknown key '" + key + "'");
  }
  if (in_net)
    throw detail::cfg_error(line_no, "net block not closed with '}'");
  if (cfg.activation.name != "custom" && cfg.activation.name != "superspike" &&
      cfg.activation.name != "triangular" && cfg.activation.name != "arctan" &&
      cfg.activation.name != "boxcar")
    throw ConfigError("unknown activation '" + cfg.activation.name + "'");
  // A bare `activation = <name>` picks up that activation's own defaults
  // rather than inheriting another family's slope.
  const ActivationDesc dd = default_activation_desc(cfg.activation.name);
  if (!slope_seen) cfg.activation.slope = dd.slope;
  if (!aux_seen) cfg.activation.aux = dd.aux;
  // Layer lines parse after all keys so the global activation settings
  // apply regardless of where the net block sits in the file.
  for (const auto& [toks, ln] : layer_lines)
    cfg.layers.push_back(detail::parse_layer_line(toks, ln, cfg));
  if (cfg.optimizer != "adam" && cfg.optimizer != "sgd")
    throw ConfigError("optimizer must be adam|sgd");
  if (cfg.loss != "integral_ce" && cfg.loss != "rate_mse")
    throw ConfigError("loss must be integral_ce|rate_mse");
  return cfg;
}

inline RunConfig read_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_config(buf.str());
}

// Bridges into the library structs.

inline NetworkSpec network_spec_from(const RunConfig& cfg) {
  NetworkSpec spec;
  spec.input_shape = cfg.input_shape;
  spec.layers = cfg.layers;
  return spec;
}

inline TrainConfig train_config_from(const RunConfig& cfg) {
  TrainConfig t;
  t.epochs = cfg.epochs;
  t.batch_size = cfg.batch_size;
  t.lr = cfg.lr;
  t.optimizer =
      cfg.optimizer == "sgd" ? OptimizerKind::Sgd : OptimizerKind::Adam;
  t.momentum = cfg.momentum;
  t.loss = cfg.loss == "rate_mse" ? LossKind::SpikeRateMse
                                  : LossKind::IntegralCrossentropy;
  t.rate_hi = cfg.rate_hi;
  t.rate_lo = cfg.rate_lo;
  t.f_min = cfg.f_min;
  t.f_max = cfg.f_max;
  t.lambda_low = cfg.lambda_low;
  t.lambda_high = cfg.lambda_high;
  t.seed = cfg.seed;
  t.unroll = cfg.unroll;
  t.max_shift = cfg.max_shift;
  t.shift_axes = cfg.shift_axes;
  return t;
}

}  // namespace spiketrain
