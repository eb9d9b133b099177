#include <cstdint>
#include <cstring>

#include <json.hpp>

#include "bytes.hpp"
#include "segquant/graph.hpp"

namespace segquant {

namespace {

using ojson = nlohmann::ordered_json;

ojson node_attrs(const Node& n) {
    ojson a = ojson::object();
    switch (n.kind) {
        case NodeKind::input:
            a["width"] = n.width;
            break;
        case NodeKind::linear:
            a["weight"] = n.weight;
            if (!n.bias.empty()) a["bias"] = n.bias;
            break;
        case NodeKind::chunk:
            a["count"] = n.count;
            a["axis"] = n.axis;
            break;
        case NodeKind::split:
            a["sizes"] = n.sizes;
            a["axis"] = n.axis;
            break;
        case NodeKind::concat:
        case NodeKind::stack:
            a["axis"] = n.axis;
            break;
        case NodeKind::activation:
            a["fn"] = to_string(n.act);
            break;
        case NodeKind::layernorm:
            a["axis"] = n.axis;
            a["eps"] = n.eps;
            break;
        default:
            break;
    }
    return a;
}

void read_attrs(Node& n, const ojson& a) {
    auto require = [&](std::initializer_list<const char*> keys) {
        for (auto& [key, _] : a.items()) {
            bool known = false;
            for (const char* k : keys)
                if (key == k) known = true;
            if (!known)
                throw_parse("parse_failure", n.id + ": unknown attr '" + key + "'");
        }
    };
    switch (n.kind) {
        case NodeKind::input:
            require({"width"});
            n.width = a.at("width").get<std::size_t>();
            break;
        case NodeKind::linear:
            require({"weight", "bias"});
            n.weight = a.at("weight").get<std::string>();
            if (a.contains("bias")) n.bias = a.at("bias").get<std::string>();
            break;
        case NodeKind::chunk:
            require({"count", "axis"});
            n.count = a.at("count").get<int>();
            if (a.contains("axis")) n.axis = a.at("axis").get<int>();
            break;
        case NodeKind::split:
            require({"sizes", "axis"});
            n.sizes = a.at("sizes").get<std::vector<std::size_t>>();
            if (a.contains("axis")) n.axis = a.at("axis").get<int>();
            break;
        case NodeKind::concat:
        case NodeKind::stack:
            require({"axis"});
            if (a.contains("axis")) n.axis = a.at("axis").get<int>();
            break;
        case NodeKind::activation:
            require({"fn"});
            n.act = act_kind_from_string(a.at("fn").get<std::string>());
            break;
        case NodeKind::layernorm:
            require({"axis", "eps"});
            if (a.contains("axis")) n.axis = a.at("axis").get<int>();
            if (a.contains("eps")) n.eps = a.at("eps").get<double>();
            break;
        default:
            require({});
            break;
    }
}

}  // namespace

std::string graph_to_json(const Graph& g) {
    ojson j;
    j["version"] = 1;
    j["nodes"] = ojson::array();
    for (const Node& n : g.nodes) {
        ojson jn;
        jn["id"] = n.id;
        jn["kind"] = to_string(n.kind);
        jn["attrs"] = node_attrs(n);
        j["nodes"].push_back(std::move(jn));
    }
    j["edges"] = ojson::array();
    for (const Edge& e : g.edges)
        j["edges"].push_back(ojson::array({e.src, e.src_port, e.dst, e.dst_port}));
    j["inputs"] = g.inputs;
    j["outputs"] = g.outputs;
    return j.dump(2) + "\n";
}

Graph graph_from_json(const std::string& text) {
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const std::exception& e) {
        throw_parse("parse_failure", std::string("graph.json: ") + e.what());
    }
    Graph g;
    try {
        if (j.at("version").get<int>() != 1)
            throw_parse("parse_failure", "unsupported graph.json version");
        for (const auto& jn : j.at("nodes")) {
            Node n;
            n.id = jn.at("id").get<std::string>();
            n.kind = node_kind_from_string(jn.at("kind").get<std::string>());
            read_attrs(n, jn.at("attrs"));
            g.nodes.push_back(std::move(n));
        }
        for (const auto& je : j.at("edges")) {
            if (!je.is_array() || je.size() != 4)
                throw_parse("parse_failure", "edge must be [src, src_port, dst, dst_port]");
            g.edges.push_back(Edge{je.at(0).get<std::string>(), je.at(1).get<int>(),
                                   je.at(2).get<std::string>(), je.at(3).get<int>()});
        }
        g.inputs = j.at("inputs").get<std::vector<std::string>>();
        g.outputs = j.at("outputs").get<std::vector<std::string>>();
    } catch (const sq_error&) {
        throw;
    } catch (const std::exception& e) {
        throw_parse("parse_failure", std::string("graph.json: ") + e.what());
    }
    return g;
}

using detail::ByteReader;
using detail::put_u16;
using detail::put_u32;
using detail::read_file;
using detail::write_file;

void save_weights(const std::map<std::string, Tensor>& weights, const std::string& path) {
    std::string out = "SQWT";
    put_u32(out, static_cast<std::uint32_t>(weights.size()));
    for (const auto& [name, t] : weights) {
        if (name.size() > 0xffff)
            throw_validation("bad_name", "tensor name too long: " + name);
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        out.push_back(static_cast<char>(t.rank()));
        for (std::size_t e : t.shape) put_u32(out, static_cast<std::uint32_t>(e));
        for (float v : t.data) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            put_u32(out, bits);
        }
    }
    write_file(path, out);
}

std::map<std::string, Tensor> load_weights(const std::string& path) {
    const std::string buf = read_file(path);
    ByteReader r(buf, path);
    if (r.bytes(4) != "SQWT")
        throw_parse("parse_failure", path + ": bad magic");
    const std::uint32_t count = r.u32();
    std::map<std::string, Tensor> weights;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = r.u16();
        const std::string name = r.bytes(name_len);
        const std::uint8_t rank = r.u8();
        std::vector<std::size_t> shape;
        std::size_t n = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            shape.push_back(r.u32());
            n *= shape.back();
        }
        std::vector<float> data(n);
        for (std::size_t e = 0; e < n; ++e) {
            const std::uint32_t bits = r.u32();
            std::memcpy(&data[e], &bits, 4);
        }
        if (!weights.emplace(name, Tensor(std::move(shape), std::move(data))).second)
            throw_parse("parse_failure", path + ": duplicate tensor '" + name + "'");
    }
    return weights;
}

Graph load_graph(const std::string& graph_path, const std::string& weights_path) {
    Graph g = graph_from_json(read_file(graph_path));
    g.weights = load_weights(weights_path);
    validate(g);
    return g;
}

void save_graph(const Graph& g, const std::string& graph_path, const std::string& weights_path) {
    write_file(graph_path, graph_to_json(g));
    save_weights(g.weights, weights_path);
}

}  // namespace segquant
