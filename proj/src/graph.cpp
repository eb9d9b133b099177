#include "segquant/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace segquant {

const char* to_string(NodeKind k) {
    switch (k) {
        case NodeKind::input: return "input";
        case NodeKind::linear: return "linear";
        case NodeKind::chunk: return "chunk";
        case NodeKind::split: return "split";
        case NodeKind::concat: return "concat";
        case NodeKind::stack: return "stack";
        case NodeKind::activation: return "activation";
        case NodeKind::add: return "add";
        case NodeKind::mul: return "mul";
        case NodeKind::layernorm: return "layernorm";
        case NodeKind::scale_shift: return "scale_shift";
        case NodeKind::output: return "output";
    }
    return "?";
}

const char* to_string(ActKind a) {
    switch (a) {
        case ActKind::silu: return "silu";
        case ActKind::gelu: return "gelu";
        case ActKind::geglu: return "geglu";
        case ActKind::relu: return "relu";
    }
    return "?";
}

NodeKind node_kind_from_string(const std::string& s) {
    static const std::map<std::string, NodeKind> table = {
        {"input", NodeKind::input},         {"linear", NodeKind::linear},
        {"chunk", NodeKind::chunk},         {"split", NodeKind::split},
        {"concat", NodeKind::concat},       {"stack", NodeKind::stack},
        {"activation", NodeKind::activation}, {"add", NodeKind::add},
        {"mul", NodeKind::mul},             {"layernorm", NodeKind::layernorm},
        {"scale_shift", NodeKind::scale_shift}, {"output", NodeKind::output},
    };
    auto it = table.find(s);
    if (it == table.end())
        throw_parse("parse_failure", "unknown node kind: " + s);
    return it->second;
}

ActKind act_kind_from_string(const std::string& s) {
    if (s == "silu") return ActKind::silu;
    if (s == "gelu") return ActKind::gelu;
    if (s == "geglu") return ActKind::geglu;
    if (s == "relu") return ActKind::relu;
    throw_parse("parse_failure", "unknown activation: " + s);
}

float silu(float x) {
    return x / (1.0f + std::exp(-x));
}

float gelu(float x) {
    // tanh approximation; constants are part of the format contract
    const float c = 0.7978845608028654f;  // sqrt(2/pi)
    const float inner = c * (x + 0.044715f * x * x * x);
    return 0.5f * x * (1.0f + std::tanh(inner));
}

float relu(float x) {
    return x > 0.0f ? x : 0.0f;
}

const Node& Graph::node(const std::string& id) const {
    auto it = index.find(id);
    if (it == index.end())
        throw_validation("bad_node", "unknown node id: " + id);
    return nodes[it->second];
}

namespace {

std::size_t fixed_input_arity(NodeKind k) {
    switch (k) {
        case NodeKind::input: return 0;
        case NodeKind::add:
        case NodeKind::mul: return 2;
        case NodeKind::scale_shift: return 3;
        case NodeKind::concat:
        case NodeKind::stack: return static_cast<std::size_t>(-1);  // variadic
        default: return 1;
    }
}

std::size_t output_arity(const Node& n) {
    switch (n.kind) {
        case NodeKind::chunk: return static_cast<std::size_t>(n.count);
        case NodeKind::split: return n.sizes.size();
        case NodeKind::output: return 0;
        default: return 1;
    }
}

}  // namespace

void validate(Graph& g) {
    g.index.clear();
    g.producers.clear();
    g.consumers.clear();
    g.out_widths.clear();

    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        const Node& n = g.nodes[i];
        if (n.id.empty())
            throw_validation("bad_node", "node with empty id");
        if (!g.index.emplace(n.id, i).second)
            throw_validation("bad_node", "duplicate node id: " + n.id);
    }

    // per-kind attribute sanity
    for (const Node& n : g.nodes) {
        switch (n.kind) {
            case NodeKind::chunk:
                if (n.count < 2)
                    throw_validation("bad_node", n.id + ": chunk count must be >= 2");
                break;
            case NodeKind::split:
                if (n.sizes.empty())
                    throw_validation("bad_node", n.id + ": split needs sizes");
                for (std::size_t s : n.sizes)
                    if (s == 0)
                        throw_validation("bad_node", n.id + ": split sizes must be positive");
                break;
            case NodeKind::input:
                if (n.width == 0)
                    throw_validation("bad_node", n.id + ": input width must be positive");
                break;
            case NodeKind::layernorm:
                if (!(n.eps > 0.0))
                    throw_validation("bad_node", n.id + ": layernorm eps must be positive");
                break;
            default: break;
        }
        if ((n.kind == NodeKind::chunk || n.kind == NodeKind::split || n.kind == NodeKind::concat ||
             n.kind == NodeKind::stack || n.kind == NodeKind::layernorm) &&
            n.axis != -1)
            throw_validation("bad_node", n.id + ": format v1 supports axis -1 (feature axis) only");
    }

    // wire ports
    std::map<std::string, std::vector<bool>> filled;
    for (const Node& n : g.nodes) {
        std::size_t arity = fixed_input_arity(n.kind);
        if (arity == static_cast<std::size_t>(-1)) {
            // variadic: size from incoming edges, checked below
            std::size_t hi = 0;
            for (const Edge& e : g.edges)
                if (e.dst == n.id) hi = std::max(hi, static_cast<std::size_t>(e.dst_port) + 1);
            if (hi < 2)
                throw_validation("bad_node", n.id + ": concat/stack need at least 2 inputs");
            arity = hi;
        }
        g.producers[n.id].assign(arity, PortRef{});
        filled[n.id].assign(arity, false);
        g.consumers[n.id].assign(output_arity(n), {});
    }

    for (const Edge& e : g.edges) {
        auto sit = g.index.find(e.src);
        auto dit = g.index.find(e.dst);
        if (sit == g.index.end() || dit == g.index.end())
            throw_validation("bad_node", "edge references unknown node " + e.src + "->" + e.dst);
        const Node& src = g.nodes[sit->second];
        if (e.src_port < 0 || static_cast<std::size_t>(e.src_port) >= output_arity(src))
            throw_validation("bad_node", e.src + ": bad source port");
        auto& slots = filled[e.dst];
        if (e.dst_port < 0 || static_cast<std::size_t>(e.dst_port) >= slots.size())
            throw_validation("bad_node", e.dst + ": bad destination port");
        if (slots[e.dst_port])
            throw_validation("bad_node", e.dst + ": input port bound twice");
        slots[e.dst_port] = true;
        g.producers[e.dst][e.dst_port] = PortRef{e.src, e.src_port};
        g.consumers[e.src][e.src_port].push_back(PortRef{e.dst, e.dst_port});
    }

    for (const Node& n : g.nodes)
        for (std::size_t p = 0; p < filled[n.id].size(); ++p)
            if (!filled[n.id][p])
                throw_validation("bad_node", n.id + ": unbound input port");

    // declared graph inputs/outputs must match node kinds exactly
    std::set<std::string> declared_in(g.inputs.begin(), g.inputs.end());
    std::set<std::string> declared_out(g.outputs.begin(), g.outputs.end());
    if (declared_in.size() != g.inputs.size() || declared_out.size() != g.outputs.size())
        throw_validation("bad_node", "duplicate entries in graph inputs/outputs");
    for (const Node& n : g.nodes) {
        if (n.kind == NodeKind::input && !declared_in.count(n.id))
            throw_validation("bad_node", n.id + ": input node not listed in graph inputs");
        if (n.kind == NodeKind::output && !declared_out.count(n.id))
            throw_validation("bad_node", n.id + ": output node not listed in graph outputs");
    }
    for (const std::string& id : g.inputs)
        if (!g.index.count(id) || g.nodes[g.index.at(id)].kind != NodeKind::input)
            throw_validation("bad_node", id + ": graph input is not an input node");
    for (const std::string& id : g.outputs)
        if (!g.index.count(id) || g.nodes[g.index.at(id)].kind != NodeKind::output)
            throw_validation("bad_node", id + ": graph output is not an output node");

    // acyclicity, then feature-width inference in topological order
    std::vector<std::string> order = topo_order(g);
    if (order.size() != g.nodes.size())
        throw_validation("cycle", "graph contains a cycle");

    for (const std::string& id : order) {
        const Node& n = g.node(id);
        auto in_width = [&](std::size_t port) {
            const PortRef& p = g.producers.at(id).at(port);
            return g.out_widths.at(p.node).at(p.port);
        };
        std::vector<std::size_t>& out = g.out_widths[id];
        switch (n.kind) {
            case NodeKind::input:
                out = {n.width};
                break;
            case NodeKind::linear: {
                auto wit = g.weights.find(n.weight);
                if (wit == g.weights.end())
                    throw_validation("dangling_weight", n.id + ": weight '" + n.weight + "' not found");
                const Tensor& w = wit->second;
                if (w.rank() != 2)
                    throw_validation("shape_conflict", n.id + ": linear weight must be rank 2");
                if (w.rows() != in_width(0))
                    throw_validation("shape_conflict", n.id + ": weight rows do not match input width");
                if (!n.bias.empty()) {
                    auto bit = g.weights.find(n.bias);
                    if (bit == g.weights.end())
                        throw_validation("dangling_weight", n.id + ": bias '" + n.bias + "' not found");
                    if (bit->second.shape != std::vector<std::size_t>{w.cols()})
                        throw_validation("shape_conflict", n.id + ": bias must be rank-1 [out]");
                }
                out = {w.cols()};
                break;
            }
            case NodeKind::chunk: {
                std::size_t w = in_width(0);
                if (w % static_cast<std::size_t>(n.count) != 0)
                    throw_validation("shape_conflict", n.id + ": width not divisible by chunk count");
                out.assign(static_cast<std::size_t>(n.count), w / n.count);
                break;
            }
            case NodeKind::split: {
                std::size_t total = 0;
                for (std::size_t s : n.sizes) total += s;
                if (total != in_width(0))
                    throw_validation("shape_conflict", n.id + ": split sizes do not sum to width");
                out = n.sizes;
                break;
            }
            case NodeKind::concat: {
                std::size_t total = 0;
                for (std::size_t p = 0; p < g.n_input_ports(id); ++p) total += in_width(p);
                out = {total};
                break;
            }
            case NodeKind::stack: {
                std::size_t w0 = in_width(0);
                for (std::size_t p = 1; p < g.n_input_ports(id); ++p)
                    if (in_width(p) != w0)
                        throw_validation("shape_conflict", n.id + ": stack inputs must share width");
                out = {w0 * g.n_input_ports(id)};
                break;
            }
            case NodeKind::activation: {
                std::size_t w = in_width(0);
                if (n.act == ActKind::geglu) {
                    if (w % 2 != 0)
                        throw_validation("shape_conflict", n.id + ": geglu needs even width");
                    out = {w / 2};
                } else {
                    out = {w};
                }
                break;
            }
            case NodeKind::add:
            case NodeKind::mul: {
                std::size_t a = in_width(0), b = in_width(1);
                if (a != b && a != 1 && b != 1)
                    throw_validation("shape_conflict", n.id + ": operand widths incompatible");
                out = {std::max(a, b)};
                break;
            }
            case NodeKind::layernorm:
                out = {in_width(0)};
                break;
            case NodeKind::scale_shift: {
                std::size_t x = in_width(0);
                if (in_width(1) != x || in_width(2) != x)
                    throw_validation("shape_conflict", n.id + ": scale/shift width must match input");
                out = {x};
                break;
            }
            case NodeKind::output:
                out = {in_width(0)};
                break;
        }
    }
}

std::vector<std::string> topo_order(const Graph& g) {
    std::map<std::string, std::size_t> indeg;
    for (const Node& n : g.nodes) indeg[n.id] = 0;
    for (const Edge& e : g.edges) ++indeg[e.dst];

    std::set<std::string> ready;
    for (auto& [id, d] : indeg)
        if (d == 0) ready.insert(id);

    std::vector<std::string> order;
    order.reserve(g.nodes.size());
    while (!ready.empty()) {
        std::string id = *ready.begin();
        ready.erase(ready.begin());
        order.push_back(id);
        for (const Edge& e : g.edges) {
            if (e.src != id) continue;
            if (--indeg[e.dst] == 0) ready.insert(e.dst);
        }
    }
    return order;  // shorter than nodes.size() iff there is a cycle
}

namespace {

// row-broadcast lookup: b may be [m x n], [1 x n], [m x 1], or [1 x 1]
float bval(const Tensor& b, std::size_t i, std::size_t j) {
    const std::size_t r = b.rows() == 1 ? 0 : i;
    const std::size_t c = b.cols() == 1 ? 0 : j;
    return b.at(r, c);
}

void check_rows(const Tensor& a, const Tensor& b, const std::string& id) {
    if (a.rows() != b.rows() && a.rows() != 1 && b.rows() != 1)
        throw_validation("shape_mismatch", id + ": operand row counts incompatible");
}

}  // namespace

std::map<std::string, Tensor> execute(const Graph& g, const std::map<std::string, Tensor>& inputs,
                                      std::map<std::string, Tensor>* capture_linear_inputs,
                                      const LinearHook* linear_hook) {
    std::map<std::string, std::vector<Tensor>> values;

    for (const std::string& id : topo_order(g)) {
        const Node& n = g.node(id);
        auto in = [&](std::size_t port) -> const Tensor& {
            const PortRef& p = g.producers.at(id).at(port);
            return values.at(p.node).at(p.port);
        };
        std::vector<Tensor>& out = values[id];
        switch (n.kind) {
            case NodeKind::input: {
                auto it = inputs.find(id);
                if (it == inputs.end())
                    throw_validation("missing_input", "no binding for graph input '" + id + "'");
                const Tensor& x = it->second;
                if (x.rank() != 2 || x.cols() != n.width)
                    throw_validation("shape_mismatch", id + ": bound tensor must be [rows x " +
                                                           std::to_string(n.width) + "]");
                out = {x};
                break;
            }
            case NodeKind::linear: {
                const Tensor& x = in(0);
                if (capture_linear_inputs) capture_linear_inputs->insert_or_assign(id, x);
                std::optional<Tensor> replaced;
                if (linear_hook) replaced = (*linear_hook)(id, x);
                if (replaced) {
                    out = {std::move(*replaced)};
                    break;
                }
                Tensor y = matmul(x, g.weights.at(n.weight));
                if (!n.bias.empty()) {
                    const Tensor& b = g.weights.at(n.bias);
                    for (std::size_t i = 0; i < y.rows(); ++i)
                        for (std::size_t j = 0; j < y.cols(); ++j) y.at(i, j) += b.data[j];
                }
                out = {std::move(y)};
                break;
            }
            case NodeKind::chunk:
            case NodeKind::split: {
                const Tensor& x = in(0);
                std::vector<std::size_t> widths =
                    n.kind == NodeKind::chunk
                        ? std::vector<std::size_t>(n.count, x.cols() / n.count)
                        : n.sizes;
                std::size_t c0 = 0;
                for (std::size_t w : widths) {
                    Tensor part({x.rows(), w});
                    for (std::size_t i = 0; i < x.rows(); ++i)
                        for (std::size_t j = 0; j < w; ++j) part.at(i, j) = x.at(i, c0 + j);
                    out.push_back(std::move(part));
                    c0 += w;
                }
                break;
            }
            case NodeKind::concat:
            case NodeKind::stack: {
                const std::size_t ports = g.n_input_ports(id);
                std::size_t rows = in(0).rows(), total = 0;
                for (std::size_t p = 0; p < ports; ++p) {
                    if (in(p).rows() != rows)
                        throw_validation("shape_mismatch", id + ": inputs must share row count");
                    total += in(p).cols();
                }
                Tensor y({rows, total});
                std::size_t c0 = 0;
                for (std::size_t p = 0; p < ports; ++p) {
                    const Tensor& x = in(p);
                    for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < x.cols(); ++j) y.at(i, c0 + j) = x.at(i, j);
                    c0 += x.cols();
                }
                out = {std::move(y)};
                break;
            }
            case NodeKind::activation: {
                const Tensor& x = in(0);
                if (n.act == ActKind::geglu) {
                    const std::size_t h = x.cols() / 2;
                    Tensor y({x.rows(), h});
                    for (std::size_t i = 0; i < x.rows(); ++i)
                        for (std::size_t j = 0; j < h; ++j)
                            y.at(i, j) = x.at(i, j) * gelu(x.at(i, h + j));
                    out = {std::move(y)};
                } else {
                    Tensor y = x;
                    for (auto& v : y.data)
                        v = n.act == ActKind::silu ? silu(v) : n.act == ActKind::gelu ? gelu(v)
                                                                                      : relu(v);
                    out = {std::move(y)};
                }
                break;
            }
            case NodeKind::add:
            case NodeKind::mul: {
                const Tensor& a = in(0);
                const Tensor& b = in(1);
                check_rows(a, b, id);
                const std::size_t rows = std::max(a.rows(), b.rows());
                const std::size_t cols = std::max(a.cols(), b.cols());
                Tensor y({rows, cols});
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j)
                        y.at(i, j) = n.kind == NodeKind::add ? bval(a, i, j) + bval(b, i, j)
                                                             : bval(a, i, j) * bval(b, i, j);
                out = {std::move(y)};
                break;
            }
            case NodeKind::layernorm: {
                const Tensor& x = in(0);
                const std::size_t k = x.cols();
                Tensor y({x.rows(), k});
                for (std::size_t i = 0; i < x.rows(); ++i) {
                    float mean = 0.0f;
                    for (std::size_t j = 0; j < k; ++j) mean += x.at(i, j);
                    mean /= static_cast<float>(k);
                    float var = 0.0f;
                    for (std::size_t j = 0; j < k; ++j) {
                        const float d = x.at(i, j) - mean;
                        var += d * d;
                    }
                    var /= static_cast<float>(k);
                    const float inv = 1.0f / std::sqrt(var + static_cast<float>(n.eps));
                    for (std::size_t j = 0; j < k; ++j) y.at(i, j) = (x.at(i, j) - mean) * inv;
                }
                out = {std::move(y)};
                break;
            }
            case NodeKind::scale_shift: {
                const Tensor& x = in(0);
                const Tensor& s = in(1);
                const Tensor& sh = in(2);
                check_rows(x, s, id);
                check_rows(x, sh, id);
                Tensor y({x.rows(), x.cols()});
                for (std::size_t i = 0; i < x.rows(); ++i)
                    for (std::size_t j = 0; j < x.cols(); ++j)
                        y.at(i, j) = x.at(i, j) * (1.0f + bval(s, i, j)) + bval(sh, i, j);
                out = {std::move(y)};
                break;
            }
            case NodeKind::output:
                out = {in(0)};
                break;
        }
        // re-validate finiteness on freshly built tensors
        for (const Tensor& t : out)
            for (float v : t.data)
                if (!std::isfinite(v))
                    throw_numeric("non_finite", id + ": produced non-finite values");
    }

    std::map<std::string, Tensor> result;
    for (const std::string& id : g.outputs) result.emplace(id, values.at(id).at(0));
    return result;
}

}  // namespace segquant
