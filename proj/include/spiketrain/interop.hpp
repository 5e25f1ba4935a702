#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spiketrain/data.hpp"
#include "spiketrain/network.hpp"
#include "spiketrain/tensor.hpp"

// Graph interchange: a sequential model becomes a chain of nodes
// (input, weight layers, neuron layers, output) with continuous-time neuron
// constants. The discretization map is forward Euler,
//
//   beta = 1 - dt/tau      tau = dt / (1 - beta)
//
// declared in the file metadata, and incoming weights are rescaled by
// 1/(1-beta) per receiving neuron on export (the exact inverse on import),
// so a roundtrip reproduces the discrete dynamics.

namespace spiketrain {

struct NodeDef {
  std::string kind;  // input|output|affine|linear|conv2d|lif|li
  Shape shape;       // input/output nodes only
  Tensor<double> w;
  Tensor<double> b;               // affine only
  std::size_t sh = 1, sw = 1;     // conv2d stride
  std::string padding = "same";   // conv2d: same|valid
  std::vector<double> tau;        // lif/li, one per neuron
  std::vector<double> r;
  std::vector<double> v_leak;
  std::vector<double> v_threshold;  // lif only
};

struct GraphDoc {
  std::uint32_t version = 1;
  double dt = 1.0;
  std::string discretization = "forward-euler";
  std::vector<std::pair<std::string, NodeDef>> nodes;
  std::vector<std::pair<std::string, std::string>> edges;
};

namespace detail {

// Effective decay actually used by the dynamics.
template <typename T>
double effective_beta(T raw) {
  return std::min(1.0, std::max(0.0, double(raw)));
}

// Per-neuron decay vector for a cell layer; scalar parameters broadcast.
template <typename T>
std::vector<double> betas_for(const Tensor<T>& beta_param,
                              std::size_t neurons) {
  std::vector<double> betas(beta_param.size() <= 1 ? 1 : neurons);
  if (beta_param.size() <= 1) {
    betas[0] = effective_beta(beta_param.size() ? beta_param[0] : T(0.5));
  } else {
    if (beta_param.size() != neurons)
      throw ContractError("interop: beta size " +
                          std::to_string(beta_param.size()) + " for " +
                          std::to_string(neurons) + " neurons");
    for (std::size_t i = 0; i < neurons; ++i)
      betas[i] = effective_beta(beta_param[i]);
  }
  return betas;
}

}  // namespace detail

// Lower a trained model to a node chain. Only linear, conv, flatten, lif,
// and li layers are representable; beta must be strictly below 1 everywhere
// (tau would be infinite). Conv cells additionally need their decay uniform
// across each channel's spatial extent, because the kernel rescale is
// per filter.
template <typename T>
GraphDoc export_graph(const NetworkSpec& spec, const NetworkParams<T>& params,
                      double dt) {
  if (!(dt > 0)) throw ArgumentError("export_graph: dt must be positive");
  const NormalizedSpec n = normalize(spec);
  const std::vector<std::size_t> layout = param_layout(n);
  if (layout.back() != params.entries.size())
    throw ContractError("export_graph: parameter count mismatch");
  GraphDoc doc;
  doc.dt = dt;

  NodeDef input;
  input.kind = "input";
  input.shape = n.input_shape;
  doc.nodes.emplace_back("input", std::move(input));

  // Name of the node awaiting connection, plus the index of the last weight
  // node emitted (its tensors are rescaled when the following cell is seen).
  std::string prev = "input";
  long pending_weights = -1;

  for (std::size_t i = 0; i < n.layers.size(); ++i) {
    const Layer& layer = n.layers[i];
    const std::string name = "l" + std::to_string(i);
    if (std::holds_alternative<FlattenLayer>(layer)) continue;
    if (std::holds_alternative<MaxPoolLayer>(layer) ||
        std::holds_alternative<MonitorLayer>(layer))
      throw UnsupportedError("export_graph: layer " + std::to_string(i) +
                             " has no interchange representation");
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      NodeDef nd;
      nd.kind = lin->bias ? "affine" : "linear";
      nd.w = cast<double>(params.entries[layout[i]].tensor);
      if (lin->bias) nd.b = cast<double>(params.entries[layout[i] + 1].tensor);
      pending_weights = long(doc.nodes.size());
      doc.nodes.emplace_back(name, std::move(nd));
    } else if (const auto* cv = std::get_if<Conv2dLayer>(&layer)) {
      if (cv->bias)
        throw UnsupportedError(
            "export_graph: conv bias has no interchange representation; "
            "declare the layer nobias");
      NodeDef nd;
      nd.kind = "conv2d";
      nd.w = cast<double>(params.entries[layout[i]].tensor);
      nd.sh = cv->sh;
      nd.sw = cv->sw;
      nd.padding = cv->padding == Padding::Same ? "same" : "valid";
      pending_weights = long(doc.nodes.size());
      doc.nodes.emplace_back(name, std::move(nd));
    } else {  // lif or li
      const bool is_lif = std::holds_alternative<LIFLayer>(layer);
      const Shape& hidden = is_lif ? std::get<LIFLayer>(layer).shape
                                   : std::get<LILayer>(layer).shape;
      const std::size_t neurons = shape_numel(hidden);
      const Tensor<T>& beta_param = params.entries[layout[i]].tensor;
      std::vector<double> betas = detail::betas_for(beta_param, neurons);
      for (double b : betas)
        if (b >= 1.0)
          throw DiscretizationError(
              "export_graph: layer " + std::to_string(i) +
              " has beta = 1; no finite time constant exists");

      if (pending_weights < 0)
        throw UnsupportedError("export_graph: layer " + std::to_string(i) +
                               " is a cell with no preceding weight layer");
      NodeDef& wnode = doc.nodes[std::size_t(pending_weights)].second;
      if (wnode.kind == "conv2d") {
        // betas indexed [F, H, W]; kernel rescale needs one scale per F.
        const std::size_t f = wnode.w.dim(0);
        const std::size_t spatial = neurons / std::max<std::size_t>(f, 1);
        std::vector<double> scale_f(f);
        for (std::size_t fi = 0; fi < f; ++fi) {
          const double b0 =
              betas.size() == 1 ? betas[0] : betas[fi * spatial];
          for (std::size_t s = 1; s < spatial && betas.size() > 1; ++s)
            if (betas[fi * spatial + s] != b0)
              throw UnsupportedError(
                  "export_graph: conv cell at layer " + std::to_string(i) +
                  " needs channel-uniform beta for kernel rescaling");
          scale_f[fi] = 1.0 / (1.0 - b0);
        }
        const std::size_t per_f = wnode.w.size() / std::max<std::size_t>(f, 1);
        for (std::size_t fi = 0; fi < f; ++fi)
          for (std::size_t k = 0; k < per_f; ++k)
            wnode.w[fi * per_f + k] *= scale_f[fi];
      } else {
        // dense: weight column j feeds neuron j.
        const std::size_t cols = wnode.w.dim(1);
        if (betas.size() > 1 && betas.size() != cols)
          throw ContractError("export_graph: beta/width mismatch");
        for (std::size_t row = 0; row < wnode.w.dim(0); ++row)
          for (std::size_t j = 0; j < cols; ++j)
            wnode.w[row * cols + j] /=
                1.0 - (betas.size() == 1 ? betas[0] : betas[j]);
        for (std::size_t j = 0; j < wnode.b.size(); ++j)
          wnode.b[j] /= 1.0 - (betas.size() == 1 ? betas[0] : betas[j]);
      }

      NodeDef nd;
      nd.kind = is_lif ? "lif" : "li";
      nd.tau.reserve(betas.size());
      for (double b : betas) nd.tau.push_back(dt / (1.0 - b));
      nd.r.assign(betas.size(), 1.0);
      nd.v_leak.assign(betas.size(), 0.0);
      if (is_lif)
        nd.v_threshold.assign(betas.size(),
                              std::get<LIFLayer>(layer).threshold);
      pending_weights = -1;
      doc.nodes.emplace_back(name, std::move(nd));
    }
    doc.edges.emplace_back(prev, name);
    prev = name;
  }

  NodeDef output;
  output.kind = "output";
  output.shape = n.out_shapes.back();
  doc.nodes.emplace_back("output", output);
  doc.edges.emplace_back(prev, "output");
  return doc;
}

namespace detail {

// Orders nodes by following edges from the unique input node; rejects
// branching, merging, cycles, and dangling names.
inline std::vector<std::string> chain_order(const GraphDoc& doc) {
  std::map<std::string, std::string> next;
  std::map<std::string, std::size_t> in_degree;
  for (const auto& [name, nd] : doc.nodes) in_degree[name] = 0;
  for (const auto& [from, to] : doc.edges) {
    if (!in_degree.count(from))
      throw FormatError("edge references unknown node '" + from + "'");
    if (!in_degree.count(to))
      throw FormatError("edge references unknown node '" + to + "'");
    if (next.count(from))
      throw UnsupportedError("unsupported topology: node '" + from +
                             "' branches");
    next[from] = to;
    in_degree[to] += 1;
  }
  std::string start;
  for (const auto& [name, nd] : doc.nodes) {
    if (nd.kind == "input") {
      if (!start.empty())
        throw UnsupportedError("unsupported topology: multiple input nodes");
      start = name;
    }
    if (in_degree[name] > 1)
      throw UnsupportedError("unsupported topology: node '" + name +
                             "' has multiple inputs");
  }
  if (start.empty())
    throw UnsupportedError("unsupported topology: no input node");
  std::vector<std::string> order;
  std::string cur = start;
  while (true) {
    order.push_back(cur);
    if (order.size() > doc.nodes.size())
      throw UnsupportedError("unsupported topology: cycle through '" + cur +
                             "'");
    auto it = next.find(cur);
    if (it == next.end()) break;
    cur = it->second;
  }
  if (order.size() != doc.nodes.size())
    throw UnsupportedError(
        "unsupported topology: disconnected nodes (reached " +
        std::to_string(order.size()) + " of " +
        std::to_string(doc.nodes.size()) + ")");
  return order;
}

inline const NodeDef& node_by_name(const GraphDoc& doc,
                                   const std::string& name) {
  for (const auto& [n, nd] : doc.nodes)
    if (n == name) return nd;
  throw FormatError("no node named '" + name + "'");
}

inline bool all_equal(const std::vector<double>& v) {
  for (double x : v)
    if (x != v[0]) return false;
  return true;
}

}  // namespace detail

// Rebuild a runnable model from a node chain. Inverse of export_graph for
// everything it emits; additionally folds nonunit resistance R into the
// weights and accepts dt == tau (beta = 0).
template <typename T>
std::pair<NetworkSpec, NetworkParams<T>> import_graph(const GraphDoc& doc,
                                                      double dt) {
  if (!(dt > 0)) throw ArgumentError("import_graph: dt must be positive");
  const std::vector<std::string> order = detail::chain_order(doc);
  if (order.size() < 3)
    throw UnsupportedError("unsupported topology: chain too short");
  const NodeDef& in_node = detail::node_by_name(doc, order.front());
  const NodeDef& out_node = detail::node_by_name(doc, order.back());
  if (out_node.kind != "output")
    throw UnsupportedError("unsupported topology: chain does not end at an "
                           "output node");

  NetworkSpec spec;
  spec.input_shape = in_node.shape;
  if (spec.input_shape.empty())
    throw FormatError("input node is missing its shape");

  // Tensors collected per declared layer, in chain order.
  struct Bundle {
    Tensor<T> w, b, beta;
    bool has_w = false, has_b = false, has_beta = false;
    bool beta_trainable = true;
  };
  std::vector<Bundle> bundles;

  Shape cur = spec.input_shape;
  // Scales deferred from each weight node to its following cell.
  const NodeDef* pending = nullptr;
  std::string pending_name;

  auto neurons_of = [](const Shape& s) { return shape_numel(s); };

  for (std::size_t oi = 1; oi + 1 < order.size(); ++oi) {
    const std::string& name = order[oi];
    const NodeDef& nd = detail::node_by_name(doc, name);
    if (nd.kind == "linear" || nd.kind == "affine" || nd.kind == "conv2d") {
      if (pending)
        throw UnsupportedError("unsupported topology: weight node '" + name +
                               "' directly follows another weight node");
      pending = &nd;
      pending_name = name;
      continue;
    }
    if (nd.kind != "lif" && nd.kind != "li")
      throw UnsupportedError("unsupported node kind '" + nd.kind +
                             "' at node '" + name + "'");
    if (!pending)
      throw UnsupportedError("unsupported topology: cell '" + name +
                             "' has no incoming weight node");

    // Decay from time constants.
    if (nd.tau.empty())
      throw FormatError("node '" + name + "' has no tau values");
    std::vector<double> betas(nd.tau.size());
    for (std::size_t k = 0; k < nd.tau.size(); ++k) {
      const double tau = nd.tau[k];
      if (!(tau > 0))
        throw FormatError("node '" + name + "' has non-positive tau");
      if (dt > tau)
        throw DiscretizationError("import_graph: node '" + name +
                                  "' has tau = " + std::to_string(tau) +
                                  " below dt = " + std::to_string(dt));
      betas[k] = std::min(1.0, std::max(0.0, 1.0 - dt / tau));
    }
    std::vector<double> rs = nd.r.empty()
                                 ? std::vector<double>(betas.size(), 1.0)
                                 : nd.r;
    if (rs.size() != betas.size())
      throw FormatError("node '" + name + "' has mismatched r length");
    for (double leak : nd.v_leak)
      if (leak != 0.0)
        throw UnsupportedError("node '" + name +
                               "': nonzero v_leak is not representable");

    Bundle bundle;
    Layer cell_layer;
    if (pending->kind == "conv2d") {
      if (cur.size() != 3)
        throw UnsupportedError("node '" + pending_name +
                               "': conv2d input is not [C,H,W]");
      if (pending->w.ndim() != 4)
        throw FormatError("node '" + pending_name +
                          "': conv weights must be rank 4");
      if (pending->b.size() > 0)
        throw UnsupportedError("node '" + pending_name +
                               "': conv nodes cannot carry a bias here");
      Conv2dLayer cl;
      cl.filters = pending->w.dim(0);
      cl.kh = pending->w.dim(2);
      cl.kw = pending->w.dim(3);
      cl.sh = pending->sh;
      cl.sw = pending->sw;
      if (pending->padding == "same") cl.padding = Padding::Same;
      else if (pending->padding == "valid") cl.padding = Padding::Valid;
      else
        throw FormatError("node '" + pending_name + "': unknown padding '" +
                          pending->padding + "'");
      cl.bias = false;
      cur = detail::chained_shape(cl, cur, oi);
      const std::size_t f = cl.filters;
      const std::size_t spatial = neurons_of(cur) / std::max<std::size_t>(f, 1);
      if (betas.size() != 1 && betas.size() != neurons_of(cur))
        throw FormatError("node '" + name + "': tau length " +
                          std::to_string(betas.size()) + " for " +
                          std::to_string(neurons_of(cur)) + " neurons");
      Tensor<double> w = pending->w.clone();
      const std::size_t per_f = w.size() / std::max<std::size_t>(f, 1);
      for (std::size_t fi = 0; fi < f; ++fi) {
        const std::size_t bi = betas.size() == 1 ? 0 : fi * spatial;
        const double scale = (1.0 - betas[bi]) * rs[rs.size() == 1 ? 0 : bi];
        for (std::size_t k = 0; k < per_f; ++k)
          w[fi * per_f + k] *= scale;
      }
      bundle.w = cast<T>(w);
      bundle.has_w = true;
      spec.layers.push_back(cl);
    } else {
      if (pending->w.ndim() != 2)
        throw FormatError("node '" + pending_name +
                          "': dense weights must be rank 2");
      LinearLayer ll;
      ll.out = pending->w.dim(1);
      ll.bias = pending->kind == "affine";
      if (cur.size() != 1) cur = Shape{shape_numel(cur)};  // implicit flatten
      if (pending->w.dim(0) != cur[0])
        throw FormatError("node '" + pending_name + "': weight rows " +
                          std::to_string(pending->w.dim(0)) +
                          " do not match incoming width " +
                          std::to_string(cur[0]));
      cur = Shape{ll.out};
      if (betas.size() != 1 && betas.size() != ll.out)
        throw FormatError("node '" + name + "': tau length " +
                          std::to_string(betas.size()) + " for " +
                          std::to_string(ll.out) + " neurons");
      Tensor<double> w = pending->w.clone();
      for (std::size_t row = 0; row < w.dim(0); ++row)
        for (std::size_t j = 0; j < ll.out; ++j) {
          const std::size_t bi = betas.size() == 1 ? 0 : j;
          w[row * ll.out + j] *=
              (1.0 - betas[bi]) * rs[rs.size() == 1 ? 0 : bi];
        }
      bundle.w = cast<T>(w);
      bundle.has_w = true;
      if (ll.bias) {
        if (pending->b.size() != ll.out)
          throw FormatError("node '" + pending_name + "': bias length " +
                            std::to_string(pending->b.size()));
        Tensor<double> b = pending->b.clone();
        for (std::size_t j = 0; j < ll.out; ++j) {
          const std::size_t bi = betas.size() == 1 ? 0 : j;
          b[j] *= (1.0 - betas[bi]) * rs[rs.size() == 1 ? 0 : bi];
        }
        bundle.b = cast<T>(b);
        bundle.has_b = true;
      }
      spec.layers.push_back(ll);
    }
    bundles.push_back(std::move(bundle));

    // The cell itself.
    Bundle cell_bundle;
    const bool scalar_beta = betas.size() == 1;
    if (scalar_beta) {
      cell_bundle.beta = Tensor<T>::scalar(T(betas[0]));
    } else {
      Tensor<T> bt(cur);
      for (std::size_t k = 0; k < betas.size(); ++k) bt[k] = T(betas[k]);
      cell_bundle.beta = std::move(bt);
    }
    cell_bundle.has_beta = true;
    if (nd.kind == "lif") {
      if (nd.v_threshold.empty() || !detail::all_equal(nd.v_threshold))
        throw UnsupportedError("node '" + name +
                               "': threshold must be a uniform scalar");
      LIFLayer lf;
      lf.shape = cur;
      lf.threshold = nd.v_threshold[0];
      lf.beta_mode =
          scalar_beta ? BetaMode::LearnableScalar : BetaMode::PerNeuron;
      cell_layer = lf;
    } else {
      LILayer li;
      li.shape = cur;
      li.beta_mode =
          scalar_beta ? BetaMode::LearnableScalar : BetaMode::PerNeuron;
      cell_layer = li;
    }
    spec.layers.push_back(cell_layer);
    bundles.push_back(std::move(cell_bundle));
    pending = nullptr;
  }
  if (pending)
    throw UnsupportedError("unsupported topology: weight node '" +
                           pending_name + "' feeds the output directly");

  // normalize() may insert Flatten layers; they consume no bundle.
  const NormalizedSpec n = normalize(spec);
  NetworkParams<T> params;
  std::size_t cursor = 0;
  std::size_t declared = 0;
  for (std::size_t i = 0; i < n.layers.size(); ++i) {
    const Layer& layer = n.layers[i];
    if (std::holds_alternative<FlattenLayer>(layer) &&
        (declared >= spec.layers.size() ||
         !std::holds_alternative<FlattenLayer>(spec.layers[declared])))
      continue;  // auto-inserted
    const Bundle& bundle = bundles[cursor];
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      params.entries.push_back(
          {detail::param_name(i, "w"), bundle.w, true});
      if (lin->bias)
        params.entries.push_back(
            {detail::param_name(i, "b"), bundle.b, true});
    } else if (std::holds_alternative<Conv2dLayer>(layer)) {
      params.entries.push_back(
          {detail::param_name(i, "w"), bundle.w, true});
    } else if (std::holds_alternative<LIFLayer>(layer) ||
               std::holds_alternative<LILayer>(layer)) {
      params.entries.push_back({detail::param_name(i, "beta"), bundle.beta,
                                bundle.beta_trainable});
    }
    ++cursor;
    ++declared;
  }
  if (cursor != bundles.size())
    throw ContractError("import_graph: layer/bundle walk diverged");
  return {std::move(spec), std::move(params)};
}

// ---------------------------------------------------------------------------
// File format: "SPKG", u32 version, u64 manifest length, JSON manifest,
// raw little-endian f64 payload. Weight tensors live in the payload;
// everything else (tau, thresholds, shapes, edges) is manifest text, so a
// file can be inspected and edited without touching the binary region.

namespace detail {

inline nlohmann::json tensor_ref(const Tensor<double>& t,
                                 std::size_t& payload_elems) {
  nlohmann::json j;
  j["shape"] = t.shape();
  j["offset"] = payload_elems;
  j["count"] = t.size();
  payload_elems += t.size();
  return j;
}

inline Tensor<double> tensor_from_ref(const nlohmann::json& j,
                                      const std::vector<double>& payload,
                                      const std::string& node) {
  if (!j.contains("shape") || !j.contains("offset") || !j.contains("count"))
    throw FormatError("node '" + node + "': malformed tensor reference");
  Shape shape = j["shape"].get<Shape>();
  const std::size_t offset = j["offset"].get<std::size_t>();
  const std::size_t count = j["count"].get<std::size_t>();
  if (count != shape_numel(shape))
    throw FormatError("node '" + node + "': tensor count disagrees with shape");
  if (offset + count > payload.size())
    throw FormatError("node '" + node + "': payload truncated at element " +
                      std::to_string(payload.size()) + " of " +
                      std::to_string(offset + count));
  Tensor<double> t(shape);
  std::memcpy(t.data(), payload.data() + offset, count * sizeof(double));
  return t;
}

}  // namespace detail

inline void write_graph(const std::string& path, const GraphDoc& doc) {
  nlohmann::json manifest;
  manifest["version"] = doc.version;
  manifest["dt"] = doc.dt;
  manifest["discretization"] = doc.discretization;
  std::size_t payload_elems = 0;
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& [name, nd] : doc.nodes) {
    nlohmann::json j;
    j["name"] = name;
    j["kind"] = nd.kind;
    if (nd.kind == "input" || nd.kind == "output") j["shape"] = nd.shape;
    if (nd.w.size() > 0) j["w"] = detail::tensor_ref(nd.w, payload_elems);
    if (nd.b.size() > 0) j["b"] = detail::tensor_ref(nd.b, payload_elems);
    if (nd.kind == "conv2d") {
      j["stride"] = {nd.sh, nd.sw};
      j["padding"] = nd.padding;
    }
    if (!nd.tau.empty()) j["tau"] = nd.tau;
    if (!nd.r.empty()) j["r"] = nd.r;
    if (!nd.v_leak.empty()) j["v_leak"] = nd.v_leak;
    if (!nd.v_threshold.empty()) j["v_threshold"] = nd.v_threshold;
    nodes.push_back(std::move(j));
  }
  manifest["nodes"] = std::move(nodes);
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [from, to] : doc.edges)
    edges.push_back({from, to});
  manifest["edges"] = std::move(edges);

  const std::string text = manifest.dump();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  detail::io_write(f, "SPKG", 4);
  detail::io_write_scalar<std::uint32_t>(f, doc.version);
  detail::io_write_scalar<std::uint64_t>(f, text.size());
  detail::io_write(f, text.data(), text.size());
  for (const auto& [name, nd] : doc.nodes) {
    if (nd.w.size() > 0)
      detail::io_write(f, nd.w.data(), nd.w.size() * sizeof(double));
    if (nd.b.size() > 0)
      detail::io_write(f, nd.b.data(), nd.b.size() * sizeof(double));
  }
  if (!f) throw IoError("short write: " + path);
}

inline GraphDoc read_graph(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  std::size_t off = 0;
  char magic[4];
  detail::io_read(f, magic, 4, off);
  if (std::memcmp(magic, "SPKG", 4) != 0)
    throw FormatError("bad magic at byte offset 0");
  const auto version = detail::io_read_scalar<std::uint32_t>(f, off);
  if (version != 1)
    throw FormatError("unsupported graph version " + std::to_string(version) +
                      " at byte offset 4");
  const auto manifest_len = detail::io_read_scalar<std::uint64_t>(f, off);
  if (manifest_len > (1u << 26))
    throw FormatError("implausible manifest length at byte offset 8");
  std::string text(manifest_len, '\0');
  detail::io_read(f, text.data(), manifest_len, off);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("manifest is not valid JSON (at manifest byte " +
                      std::to_string(e.byte) + ")");
  }
  // Payload: everything to EOF, in f64 elements.
  std::vector<double> payload;
  {
    std::vector<char> rest((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
    if (rest.size() % sizeof(double) != 0)
      throw FormatError("payload length " + std::to_string(rest.size()) +
                        " at byte offset " + std::to_string(off) +
                        " is not a multiple of 8");
    payload.resize(rest.size() / sizeof(double));
    std::memcpy(payload.data(), rest.data(), rest.size());
  }

  GraphDoc doc;
  doc.version = version;
  try {
    doc.dt = manifest.at("dt").get<double>();
    if (manifest.contains("discretization"))
      doc.discretization = manifest["discretization"].get<std::string>();
    for (const auto& j : manifest.at("nodes")) {
      const std::string name = j.at("name").get<std::string>();
      NodeDef nd;
      nd.kind = j.at("kind").get<std::string>();
      if (j.contains("shape")) nd.shape = j["shape"].get<Shape>();
      if (j.contains("w")) nd.w = detail::tensor_from_ref(j["w"], payload, name);
      if (j.contains("b")) nd.b = detail::tensor_from_ref(j["b"], payload, name);
      if (j.contains("stride")) {
        nd.sh = j["stride"].at(0).get<std::size_t>();
        nd.sw = j["stride"].at(1).get<std::size_t>();
      }
      if (j.contains("padding"))
        nd.padding = j["padding"].get<std::string>();
      if (j.contains("tau")) nd.tau = j["tau"].get<std::vector<double>>();
      if (j.contains("r")) nd.r = j["r"].get<std::vector<double>>();
      if (j.contains("v_leak"))
        nd.v_leak = j["v_leak"].get<std::vector<double>>();
      if (j.contains("v_threshold"))
        nd.v_threshold = j["v_threshold"].get<std::vector<double>>();
      doc.nodes.emplace_back(name, std::move(nd));
    }
    for (const auto& e : manifest.at("edges"))
      doc.edges.emplace_back(e.at(0).get<std::string>(),
                             e.at(1).get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
  return doc;
}

}  // namespace spiketrain
