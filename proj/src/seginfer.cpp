#include "segquant/seginfer.hpp"

namespace segquant {

namespace {

// Shape-preserving unary nodes the segment patterns may look through. The
// value flows through one port; add/mul count only when the other operand is
// a scalar broadcast. Geglu halves the feature axis, so it never qualifies.
// `for_dualscale` additionally excludes layernorm and activations: eligibility
// must track the activation's own output distribution, and a layernorm (or a
// second activation) replaces it.
bool traversable(const Graph& g, const Node& n, bool for_dualscale) {
    switch (n.kind) {
        case NodeKind::activation:
            return !for_dualscale && n.act != ActKind::geglu;
        case NodeKind::layernorm:
            return !for_dualscale;
        case NodeKind::add:
        case NodeKind::mul: {
            const std::size_t w0 = g.out_widths.at(g.producers.at(n.id)[0].node)
                                       .at(g.producers.at(n.id)[0].port);
            const std::size_t w1 = g.out_widths.at(g.producers.at(n.id)[1].node)
                                       .at(g.producers.at(n.id)[1].port);
            return (w0 == 1) != (w1 == 1);  // exactly one scalar operand
        }
        default:
            return false;
    }
}

// For a traversable add/mul, the port carrying the (non-scalar) value.
std::size_t value_port(const Graph& g, const Node& n) {
    if (n.kind != NodeKind::add && n.kind != NodeKind::mul) return 0;
    const std::size_t w0 =
        g.out_widths.at(g.producers.at(n.id)[0].node).at(g.producers.at(n.id)[0].port);
    return w0 == 1 ? 1 : 0;
}

}  // namespace

std::vector<std::size_t> infer_output_segments(const Graph& g, const std::string& layer,
                                               SegmentPlan* prov) {
    const Node& lin = g.node(layer);
    if (lin.kind != NodeKind::linear)
        throw_validation("bad_node", layer + ": not a linear node");
    const std::size_t n = g.out_widths.at(layer).at(0);
    const std::vector<std::size_t> fallback = {n};

    std::string cur = layer;
    while (true) {
        const auto& sinks = g.consumers.at(cur).at(0);
        if (sinks.size() != 1) return fallback;  // fan-out: pattern is ambiguous
        const Node& next = g.node(sinks[0].node);
        if (next.kind == NodeKind::chunk && next.axis == -1) {
            if (prov) {
                prov->out_pattern = "chunk";
                prov->out_pattern_node = next.id;
            }
            return std::vector<std::size_t>(static_cast<std::size_t>(next.count),
                                            n / static_cast<std::size_t>(next.count));
        }
        if (next.kind == NodeKind::split && next.axis == -1) {
            if (prov) {
                prov->out_pattern = "split";
                prov->out_pattern_node = next.id;
            }
            return next.sizes;
        }
        if (!traversable(g, next, /*for_dualscale=*/false)) return fallback;
        if (sinks[0].port != static_cast<int>(value_port(g, next))) return fallback;
        cur = next.id;
    }
}

std::vector<std::size_t> infer_input_segments(const Graph& g, const std::string& layer,
                                              SegmentPlan* prov) {
    const Node& lin = g.node(layer);
    if (lin.kind != NodeKind::linear)
        throw_validation("bad_node", layer + ": not a linear node");
    const std::size_t k = g.weights.at(lin.weight).rows();
    const std::vector<std::size_t> fallback = {k};

    PortRef p = g.producers.at(layer)[0];
    while (true) {
        const Node& src = g.node(p.node);
        if ((src.kind == NodeKind::concat || src.kind == NodeKind::stack) && src.axis == -1) {
            std::vector<std::size_t> widths;
            for (std::size_t port = 0; port < g.n_input_ports(src.id); ++port) {
                const PortRef& in = g.producers.at(src.id)[port];
                widths.push_back(g.out_widths.at(in.node).at(in.port));
            }
            if (prov) {
                prov->in_pattern = src.kind == NodeKind::concat ? "concat" : "stack";
                prov->in_pattern_node = src.id;
            }
            return widths;
        }
        if (!traversable(g, src, /*for_dualscale=*/false)) return fallback;
        p = g.producers.at(src.id)[value_port(g, src)];
    }
}

std::vector<std::pair<std::string, std::string>> find_act_to_linear(const Graph& g) {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const std::string& id : topo_order(g)) {
        const Node& n = g.node(id);
        if (n.kind != NodeKind::linear) continue;
        PortRef p = g.producers.at(id)[0];
        while (true) {
            const Node& src = g.node(p.node);
            if (src.kind == NodeKind::activation) {
                if (src.act != ActKind::relu) pairs.emplace_back(src.id, id);
                break;
            }
            if (!traversable(g, src, /*for_dualscale=*/true)) break;
            p = g.producers.at(src.id)[value_port(g, src)];
        }
    }
    return pairs;
}

QuantPlan build_plan(const Graph& g, const PlanToggles& toggles) {
    std::map<std::string, std::string> eligible;  // linear -> activation
    for (const auto& [act, lin] : find_act_to_linear(g)) eligible[lin] = act;

    QuantPlan plan;
    for (const Node& n : g.nodes) {
        if (n.kind != NodeKind::linear) continue;
        SegmentPlan sp;
        sp.layer_id = n.id;
        const Tensor& w = g.weights.at(n.weight);
        if (toggles.seglinear) {
            sp.out_segments = infer_output_segments(g, n.id, &sp);
            sp.in_segments = infer_input_segments(g, n.id, &sp);
        } else {
            sp.out_segments = {w.cols()};
            sp.in_segments = {w.rows()};
        }
        sp.grid = sp.out_segmented() && sp.in_segmented();
        if (toggles.dualscale && eligible.count(n.id)) {
            sp.dualscale_eligible = true;
            sp.dualscale_node = eligible.at(n.id);
        }
        plan.layers.emplace(n.id, std::move(sp));
    }
    return plan;
}

}  // namespace segquant
