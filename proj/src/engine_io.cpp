#include <cstring>
#include <filesystem>

#include "bytes.hpp"
#include "segquant/engine.hpp"

namespace segquant {

namespace {

using ojson = nlohmann::ordered_json;
using detail::ByteReader;
using detail::put_u16;
using detail::put_u32;
using detail::read_file;
using detail::write_file;

// qweights.bin: same framing as weights.bin plus a dtype byte per tensor
// (0 = f32, 1 = i8, 2 = i32); magic "SQWQ". See docs/FORMATS.md.
struct QEntry {
    std::uint8_t dtype = 0;
    std::vector<std::size_t> shape;
    std::vector<float> f32;
    std::vector<std::int32_t> ints;
};

void save_qweights(const std::map<std::string, QEntry>& entries, const std::string& path) {
    std::string out = "SQWQ";
    put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, e] : entries) {
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        out.push_back(static_cast<char>(e.dtype));
        out.push_back(static_cast<char>(e.shape.size()));
        for (std::size_t d : e.shape) put_u32(out, static_cast<std::uint32_t>(d));
        if (e.dtype == 0) {
            for (float v : e.f32) {
                std::uint32_t bits;
                std::memcpy(&bits, &v, 4);
                put_u32(out, bits);
            }
        } else if (e.dtype == 1) {
            for (std::int32_t v : e.ints) out.push_back(static_cast<char>(static_cast<std::int8_t>(v)));
        } else {
            for (std::int32_t v : e.ints) put_u32(out, static_cast<std::uint32_t>(v));
        }
    }
    write_file(path, out);
}

std::map<std::string, QEntry> load_qweights(const std::string& path) {
    const std::string buf = read_file(path);
    ByteReader r(buf, path);
    if (r.bytes(4) != "SQWQ")
        throw_parse("parse_failure", path + ": bad magic");
    const std::uint32_t count = r.u32();
    std::map<std::string, QEntry> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.bytes(r.u16());
        QEntry e;
        e.dtype = r.u8();
        const std::uint8_t rank = r.u8();
        std::size_t n = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            e.shape.push_back(r.u32());
            n *= e.shape.back();
        }
        if (e.dtype == 0) {
            e.f32.resize(n);
            for (std::size_t v = 0; v < n; ++v) {
                const std::uint32_t bits = r.u32();
                std::memcpy(&e.f32[v], &bits, 4);
            }
        } else if (e.dtype == 1) {
            e.ints.resize(n);
            for (std::size_t v = 0; v < n; ++v)
                e.ints[v] = static_cast<std::int8_t>(r.bytes(1)[0]);
        } else if (e.dtype == 2) {
            e.ints.resize(n);
            for (std::size_t v = 0; v < n; ++v) e.ints[v] = static_cast<std::int32_t>(r.u32());
        } else {
            throw_parse("parse_failure", path + ": unknown dtype for '" + name + "'");
        }
        entries.emplace(name, std::move(e));
    }
    return entries;
}

QEntry from_int(const IntTensor& t) {
    QEntry e;
    e.dtype = 1;
    e.shape = t.shape;
    e.ints = t.data;
    return e;
}

QEntry from_f32(const Tensor& t) {
    QEntry e;
    e.dtype = 0;
    e.shape = t.shape;
    e.f32 = t.data;
    return e;
}

ojson params_to_json(const std::vector<QParams>& params) {
    ojson arr = ojson::array();
    for (const QParams& p : params) {
        ojson jp;
        jp["scale"] = p.scale;
        jp["scale_neg"] = p.scale_neg;
        jp["zero_point"] = p.zero_point;
        jp["qmin"] = p.qmin;
        jp["qmax"] = p.qmax;
        arr.push_back(std::move(jp));
    }
    return arr;
}

std::vector<QParams> params_from_json(const ojson& arr) {
    std::vector<QParams> params;
    for (const auto& jp : arr) {
        QParams p;
        p.scale = jp.at("scale").get<float>();
        p.scale_neg = jp.at("scale_neg").get<float>();
        p.zero_point = jp.at("zero_point").get<std::int32_t>();
        p.qmin = jp.at("qmin").get<std::int32_t>();
        p.qmax = jp.at("qmax").get<std::int32_t>();
        params.push_back(p);
    }
    return params;
}

ojson scheme_to_json(const Scheme& s) {
    ojson j;
    j["kind"] = to_string(s.kind);
    j["bits"] = s.bits;
    j["granularity"] = to_string(s.granularity);
    return j;
}

Scheme scheme_from_json(const ojson& j) {
    Scheme s;
    s.kind = scheme_kind_from_string(j.at("kind").get<std::string>());
    s.bits = j.at("bits").get<int>();
    s.granularity = granularity_from_string(j.at("granularity").get<std::string>());
    return s;
}

ojson seg_plan_to_json(const SegmentPlan& sp) {
    ojson j;
    j["id"] = sp.layer_id;
    j["out_segments"] = sp.out_segments;
    j["in_segments"] = sp.in_segments;
    j["dualscale"] = sp.dualscale_eligible;
    j["out_pattern"] = sp.out_pattern;
    j["out_pattern_node"] = sp.out_pattern_node;
    j["in_pattern"] = sp.in_pattern;
    j["in_pattern_node"] = sp.in_pattern_node;
    j["dualscale_node"] = sp.dualscale_node;
    j["grid"] = sp.grid;
    return j;
}

SegmentPlan seg_plan_from_json(const ojson& j) {
    SegmentPlan sp;
    sp.layer_id = j.at("id").get<std::string>();
    sp.out_segments = j.at("out_segments").get<std::vector<std::size_t>>();
    sp.in_segments = j.at("in_segments").get<std::vector<std::size_t>>();
    sp.dualscale_eligible = j.at("dualscale").get<bool>();
    sp.out_pattern = j.at("out_pattern").get<std::string>();
    sp.out_pattern_node = j.at("out_pattern_node").get<std::string>();
    sp.in_pattern = j.at("in_pattern").get<std::string>();
    sp.in_pattern_node = j.at("in_pattern_node").get<std::string>();
    sp.dualscale_node = j.at("dualscale_node").get<std::string>();
    sp.grid = j.at("grid").get<bool>();
    return sp;
}

}  // namespace

void save_bundle(const QuantizedModel& model, const nlohmann::ordered_json& report,
                 const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw_io("io", "cannot create bundle directory " + dir);

    ojson j;
    j["version"] = 1;
    j["tool_version"] = kToolVersion;
    j["plan"] = ojson::array();
    for (const auto& [id, sp] : model.plan.layers) j["plan"].push_back(seg_plan_to_json(sp));

    std::map<std::string, QEntry> entries;
    j["layers"] = ojson::array();
    for (const auto& [id, ql] : model.layers) {
        ojson jl;
        jl["id"] = id;
        jl["method"] = ql.method;
        jl["gptq_fallback"] = ql.gptq_fallback;

        ojson jw = scheme_to_json(ql.weight.scheme);
        jw["row_bounds"] = ql.weight.groups.row_bounds;
        jw["col_bounds"] = ql.weight.groups.col_bounds;
        jw["params"] = params_to_json(ql.weight.params);
        jl["weight"] = std::move(jw);
        if (ql.weight.scheme.kind == SchemeKind::fp8_e4m3_sim)
            entries.emplace(id + "/fp8", from_f32(ql.weight.fp8));
        else
            entries.emplace(id + "/codes", from_int(ql.weight.codes));

        ojson ja = scheme_to_json(ql.act_scheme);
        ja["dual"] = ql.act_dual;
        ja["params"] = params_to_json(ql.act_params);
        jl["act"] = std::move(ja);

        jl["has_bias"] = ql.has_bias;
        if (ql.has_bias) entries.emplace(id + "/bias", from_f32(ql.bias));

        if (!ql.smooth_scale.empty()) {
            jl["smooth"] = ojson{{"alpha", ql.smooth_alpha}, {"mse", ql.smooth_mse}};
            QEntry e;
            e.dtype = 0;
            e.shape = {ql.smooth_scale.size()};
            e.f32 = ql.smooth_scale;
            entries.emplace(id + "/smooth", std::move(e));
        } else {
            jl["smooth"] = nullptr;
        }

        if (ql.lowrank_rank > 0) {
            jl["lowrank"] = ojson{{"rank", ql.lowrank_rank},
                                  {"residual_fnorm", ql.lowrank_residual_fnorm},
                                  {"smoothed_input", ql.lowrank_smoothed_input}};
            entries.emplace(id + "/l1", from_f32(ql.lowrank_l1));
            entries.emplace(id + "/l2", from_f32(ql.lowrank_l2));
        } else {
            jl["lowrank"] = nullptr;
        }
        j["layers"].push_back(std::move(jl));
    }

    const std::filesystem::path base(dir);
    write_file((base / "qmodel.json").string(), j.dump(2) + "\n");
    save_qweights(entries, (base / "qweights.bin").string());
    write_file((base / "report.json").string(), report.dump(2) + "\n");
}

QuantizedModel load_bundle(const std::string& dir) {
    const std::filesystem::path base(dir);
    ojson j;
    try {
        j = ojson::parse(read_file((base / "qmodel.json").string()));
    } catch (const sq_error&) {
        throw;
    } catch (const std::exception& e) {
        throw_parse("parse_failure", std::string("qmodel.json: ") + e.what());
    }
    auto entries = load_qweights((base / "qweights.bin").string());
    auto entry = [&](const std::string& name) -> const QEntry& {
        auto it = entries.find(name);
        if (it == entries.end())
            throw_parse("parse_failure", "qweights.bin: missing entry " + name);
        return it->second;
    };

    QuantizedModel model;
    try {
        for (const auto& jp : j.at("plan")) {
            SegmentPlan sp = seg_plan_from_json(jp);
            model.plan.layers.emplace(sp.layer_id, std::move(sp));
        }
        for (const auto& jl : j.at("layers")) {
            QuantizedLayer ql;
            ql.layer_id = jl.at("id").get<std::string>();
            ql.plan = model.plan.layers.at(ql.layer_id);
            ql.method = jl.at("method").get<std::string>();
            ql.gptq_fallback = jl.at("gptq_fallback").get<bool>();

            const ojson& jw = jl.at("weight");
            ql.weight.scheme = scheme_from_json(jw);
            ql.weight.groups.row_bounds = jw.at("row_bounds").get<std::vector<std::size_t>>();
            ql.weight.groups.col_bounds = jw.at("col_bounds").get<std::vector<std::size_t>>();
            ql.weight.params = params_from_json(jw.at("params"));
            if (ql.weight.scheme.kind == SchemeKind::fp8_e4m3_sim) {
                const QEntry& e = entry(ql.layer_id + "/fp8");
                ql.weight.fp8 = Tensor(e.shape, e.f32);
                ql.weight.shape = e.shape;
            } else {
                const QEntry& e = entry(ql.layer_id + "/codes");
                IntTensor t;
                t.shape = e.shape;
                t.data = e.ints;
                ql.weight.codes = std::move(t);
                ql.weight.shape = e.shape;
            }

            const ojson& ja = jl.at("act");
            ql.act_scheme = scheme_from_json(ja);
            ql.act_dual = ja.at("dual").get<bool>();
            ql.act_params = params_from_json(ja.at("params"));

            ql.has_bias = jl.at("has_bias").get<bool>();
            if (ql.has_bias) {
                const QEntry& e = entry(ql.layer_id + "/bias");
                ql.bias = Tensor(e.shape, e.f32);
            }

            if (!jl.at("smooth").is_null()) {
                ql.smooth_alpha = jl.at("smooth").at("alpha").get<std::vector<double>>();
                ql.smooth_mse = jl.at("smooth").at("mse").get<std::vector<double>>();
                ql.smooth_scale = entry(ql.layer_id + "/smooth").f32;
            }
            if (!jl.at("lowrank").is_null()) {
                const ojson& jr = jl.at("lowrank");
                ql.lowrank_rank = jr.at("rank").get<int>();
                ql.lowrank_residual_fnorm = jr.at("residual_fnorm").get<double>();
                ql.lowrank_smoothed_input = jr.at("smoothed_input").get<bool>();
                const QEntry& e1 = entry(ql.layer_id + "/l1");
                const QEntry& e2 = entry(ql.layer_id + "/l2");
                ql.lowrank_l1 = Tensor(e1.shape, e1.f32);
                ql.lowrank_l2 = Tensor(e2.shape, e2.f32);
            }
            model.layers.emplace(ql.layer_id, std::move(ql));
        }
    } catch (const sq_error&) {
        throw;
    } catch (const std::exception& e) {
        throw_parse("parse_failure", std::string("qmodel.json: ") + e.what());
    }
    return model;
}

}  // namespace segquant
