#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "segquant/tensor.hpp"

namespace segquant {

enum class NodeKind {
    input,
    linear,
    chunk,
    split,
    concat,
    stack,
    activation,
    add,
    mul,
    layernorm,
    scale_shift,
    output,
};

enum class ActKind { silu, gelu, geglu, relu };

const char* to_string(NodeKind k);
const char* to_string(ActKind a);
NodeKind node_kind_from_string(const std::string& s);
ActKind act_kind_from_string(const std::string& s);

// Closed-form activations shared by the executor and the stats fixtures.
// gelu is the tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
float silu(float x);
float gelu(float x);
float relu(float x);

struct Node {
    std::string id;
    NodeKind kind = NodeKind::input;

    // kind-dependent attributes; unused fields keep their defaults
    std::string weight;              // linear
    std::string bias;                // linear (empty = none)
    int count = 0;                   // chunk
    std::vector<std::size_t> sizes;  // split
    int axis = -1;                   // chunk/split/concat/stack/layernorm (v1: last axis only)
    ActKind act = ActKind::silu;     // activation
    double eps = 1e-5;               // layernorm
    std::size_t width = 0;           // input: feature width of the bound tensor
};

struct Edge {
    std::string src;
    int src_port = 0;
    std::string dst;
    int dst_port = 0;
};

struct PortRef {
    std::string node;
    int port = 0;
};

/// Computation DAG. Values on edges are rank-2 [rows x features] tensors;
/// the feature axis is always the last one. Validation (performed by
/// load/attach) checks acyclicity, port wiring, weight references, and
/// feature-width consistency; row counts are checked at execution time.
struct Graph {
    std::vector<Node> nodes;
    std::vector<Edge> edges;
    std::map<std::string, Tensor> weights;
    std::vector<std::string> inputs;   // ids of input nodes
    std::vector<std::string> outputs;  // ids of output nodes

    // derived by validate()
    std::map<std::string, std::size_t> index;                     // id -> nodes[]
    std::map<std::string, std::vector<PortRef>> producers;        // per node: input port -> producer
    std::map<std::string, std::vector<std::vector<PortRef>>> consumers;  // per node: out port -> sinks
    std::map<std::string, std::vector<std::size_t>> out_widths;   // per node: out port -> feature width

    const Node& node(const std::string& id) const;
    bool has_node(const std::string& id) const { return index.count(id) != 0; }
    std::size_t n_input_ports(const std::string& id) const { return producers.at(id).size(); }
    std::size_t n_output_ports(const std::string& id) const { return out_widths.at(id).size(); }
};

/// Re-derives the index/producer/consumer/width tables and checks every
/// structural invariant. Throws sq_error with kinds: "cycle",
/// "dangling_weight", "shape_conflict", "bad_node".
void validate(Graph& g);

/// Canonical JSON text for graph.json; load(save(g)) is byte-identical.
std::string graph_to_json(const Graph& g);
Graph graph_from_json(const std::string& text);  // structure only, not validated

// weights.bin container (magic "SQWT", f32 payloads; see docs/FORMATS.md)
void save_weights(const std::map<std::string, Tensor>& weights, const std::string& path);
std::map<std::string, Tensor> load_weights(const std::string& path);

Graph load_graph(const std::string& graph_path, const std::string& weights_path);
void save_graph(const Graph& g, const std::string& graph_path, const std::string& weights_path);

/// Kahn order with lexicographic-smallest-id tie-break; stable across runs
/// and platforms.
std::vector<std::string> topo_order(const Graph& g);

/// Replacement forward for a linear node; returning nullopt keeps the
/// full-precision path. This is how quantized execution is simulated.
using LinearHook = std::function<std::optional<Tensor>(const std::string& id, const Tensor& x)>;

/// Reference full-precision executor; ground truth for every error metric.
/// When `capture_linear_inputs` is given, each linear node's input tensor is
/// recorded there (calibration capture).
std::map<std::string, Tensor> execute(const Graph& g, const std::map<std::string, Tensor>& inputs,
                                      std::map<std::string, Tensor>* capture_linear_inputs = nullptr,
                                      const LinearHook* linear_hook = nullptr);

}  // namespace segquant
