#include "sparsemask/pruner.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace sparsemask {

using ordered_json = nlohmann::ordered_json;

int PrunedArchitecture::edge_count() const {
    int n = 0;
    for (const auto& s : stages) n += static_cast<int>(s.inputs.size());
    return n;
}

const ArchStage* PrunedArchitecture::find_stage(int l) const {
    for (const auto& s : stages) {
        if (s.l == l) return &s;
    }
    return nullptr;
}

oracles::PrunedGraph PrunedArchitecture::graph() const {
    oracles::PrunedGraph g;
    g.output_stage = output_stage;
    for (const auto& s : stages) {
        g.stages.push_back(s.l);
        for (const auto& in : s.inputs) g.edges.emplace_back(s.l, in);
    }
    return g;
}

void PrunedArchitecture::validate() const {
    encoder.validate();
    const int L = encoder.num_stages();
    if (decoder_channels < 1) throw std::runtime_error("architecture: decoder_channels < 1");
    if (stages.empty()) throw std::runtime_error("architecture: no decoder stages");

    std::set<int> kept;
    int prev = 0;
    for (const auto& s : stages) {
        if (s.l <= prev) throw std::runtime_error("architecture: stages not strictly ascending");
        prev = s.l;
        if (s.l < 1 || s.l > L) {
            throw std::runtime_error("architecture: stage " + std::to_string(s.l) +
                                     " outside encoder range 1.." + std::to_string(L));
        }
        kept.insert(s.l);
    }
    if (!kept.count(output_stage)) {
        throw std::runtime_error("architecture: output_stage " + std::to_string(output_stage) +
                                 " is not a kept stage");
    }

    std::set<int> consumed;
    for (const auto& s : stages) {
        if (s.inputs.empty()) {
            throw std::runtime_error("architecture: stage " + std::to_string(s.l) +
                                     " has no input edges");
        }
        std::set<std::pair<int, int>> seen;
        for (const auto& in : s.inputs) {
            if (!seen.insert({static_cast<int>(in.kind), in.index}).second) {
                throw std::runtime_error("architecture: duplicate input " + in.str() +
                                         " on stage " + std::to_string(s.l));
            }
            switch (in.kind) {
                case FeatureKind::encoder:
                    if (in.index < s.l || in.index > L) {
                        throw std::runtime_error("architecture: edge " + in.str() +
                                                 " illegal for stage " + std::to_string(s.l));
                    }
                    break;
                case FeatureKind::decoder:
                    if (in.index <= s.l || in.index > L) {
                        throw std::runtime_error("architecture: edge " + in.str() +
                                                 " illegal for stage " + std::to_string(s.l));
                    }
                    if (!kept.count(in.index)) {
                        throw std::runtime_error("architecture: edge " + in.str() +
                                                 " references a missing stage");
                    }
                    consumed.insert(in.index);
                    break;
                case FeatureKind::global:
                    if (in.index != 0) {
                        throw std::runtime_error("architecture: global input must have index 0");
                    }
                    break;
            }
        }
    }
    for (const auto& s : stages) {
        if (s.l != output_stage && !consumed.count(s.l)) {
            throw std::runtime_error("architecture: stage " + std::to_string(s.l) +
                                     " output is never consumed");
        }
    }
}

namespace {

std::string gate_histogram(const GateMatrix& gm) {
    int bins[10] = {0};
    for (const auto& e : gm.entries) {
        int b = static_cast<int>(e.value * 10.0);
        b = std::clamp(b, 0, 9);
        ++bins[b];
    }
    std::ostringstream os;
    os << "gate histogram [0..1 in tenths]:";
    for (int b = 0; b < 10; ++b) os << " " << bins[b];
    return os.str();
}

}  // namespace

// Rule 2/3 fixpoint over an edge multimap. Every pass evaluates all stages
// against the same snapshot; the lowest alive stage plays the output role.
std::set<int> rules23_fixpoint(int num_stages,
                               const std::map<int, std::vector<FeatureRef>>& inputs) {
    std::set<int> alive;
    for (int l = 1; l <= num_stages; ++l) alive.insert(l);
    while (!alive.empty()) {
        const int output_stage = *alive.begin();
        std::map<int, int> in_degree, out_degree;
        for (int l : alive) {
            auto it = inputs.find(l);
            if (it == inputs.end()) continue;
            for (const auto& src : it->second) {
                if (src.kind == FeatureKind::decoder) {
                    if (alive.count(src.index)) {
                        ++in_degree[l];
                        ++out_degree[src.index];
                    }
                } else {
                    ++in_degree[l];
                }
            }
        }
        std::vector<int> doomed;
        for (int l : alive) {
            const bool consumed = (l == output_stage) || out_degree[l] > 0;
            if (in_degree[l] == 0 || !consumed) doomed.push_back(l);
        }
        if (doomed.empty()) break;
        for (int l : doomed) alive.erase(l);
    }
    return alive;
}

namespace {

PrunedArchitecture assemble(const std::set<int>& alive,
                            const std::map<int, std::vector<FeatureRef>>& inputs,
                            const PruneContext& ctx, double sigma) {
    PrunedArchitecture arch;
    arch.encoder = ctx.encoder;
    arch.decoder_channels = ctx.decoder_channels;
    arch.sigma = sigma;
    arch.seed = ctx.seed;
    arch.config_digest = ctx.config_digest;
    arch.output_stage = *alive.begin();
    for (int l : alive) {
        ArchStage s;
        s.l = l;
        auto it = inputs.find(l);
        if (it != inputs.end()) {
            for (const auto& src : it->second) {
                if (src.kind == FeatureKind::decoder && !alive.count(src.index)) continue;
                s.inputs.push_back(src);
            }
        }
        arch.stages.push_back(std::move(s));
    }
    return arch;
}

}  // namespace

PrunedArchitecture prune(const GateMatrix& gm, double sigma, const PruneContext& ctx) {
    if (!(sigma > 0.0 && sigma < 1.0)) {
        throw std::runtime_error("prune: sigma must be in (0,1), got " + std::to_string(sigma));
    }
    ctx.encoder.validate();
    const int L = gm.num_stages;
    if (L < 1 || L != ctx.encoder.num_stages()) {
        throw std::runtime_error("prune: gate matrix covers " + std::to_string(L) +
                                 " stages but encoder has " +
                                 std::to_string(ctx.encoder.num_stages()));
    }

    // Rule 1 once: drop w < sigma (strict).
    std::map<int, std::vector<FeatureRef>> inputs;
    for (const auto& e : gm.entries) {
        if (!(e.value < sigma)) inputs[e.stage].push_back(e.source);
    }
    std::set<int> alive = rules23_fixpoint(L, inputs);
    if (alive.empty()) {
        throw std::runtime_error("prune: empty architecture, every stage removed at sigma=" +
                                 std::to_string(sigma) + "; " + gate_histogram(gm));
    }
    PrunedArchitecture arch = assemble(alive, inputs, ctx, sigma);
    arch.validate();
    return arch;
}

PrunedArchitecture full_architecture(int num_stages, const PruneContext& ctx) {
    ctx.encoder.validate();
    if (num_stages != ctx.encoder.num_stages()) {
        throw std::runtime_error("full_architecture: stage count mismatch");
    }
    PrunedArchitecture arch;
    arch.encoder = ctx.encoder;
    arch.decoder_channels = ctx.decoder_channels;
    arch.sigma = 0.0;
    arch.seed = ctx.seed;
    arch.config_digest = ctx.config_digest;
    arch.output_stage = 1;
    for (int l = 1; l <= num_stages; ++l) {
        ArchStage s;
        s.l = l;
        s.inputs = candidate_sources(num_stages, l);
        arch.stages.push_back(std::move(s));
    }
    arch.validate();
    return arch;
}

// ---------------------------------------------------------------------------
// JSON schema
// ---------------------------------------------------------------------------

namespace {

const char* kind_str(FeatureKind k) {
    switch (k) {
        case FeatureKind::encoder: return "E";
        case FeatureKind::decoder: return "D";
        case FeatureKind::global: return "G";
    }
    return "?";
}

FeatureKind kind_parse(const std::string& s, const std::string& path) {
    if (s == "E") return FeatureKind::encoder;
    if (s == "D") return FeatureKind::decoder;
    if (s == "G") return FeatureKind::global;
    throw std::runtime_error("architecture json: unknown kind '" + s + "' at " + path);
}

void reject_unknown(const ordered_json& obj, const std::vector<std::string>& known,
                    const std::string& path) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
            throw std::runtime_error("architecture json: unknown field '" + path + "." +
                                     it.key() + "'");
        }
    }
}

template <typename T>
T require_field(const ordered_json& obj, const std::string& key, const std::string& path) {
    if (!obj.contains(key)) {
        throw std::runtime_error("architecture json: missing field '" + path + "." + key + "'");
    }
    try {
        return obj.at(key).get<T>();
    } catch (const std::exception&) {
        throw std::runtime_error("architecture json: bad value at '" + path + "." + key + "'");
    }
}

}  // namespace

std::string architecture_to_json(const PrunedArchitecture& arch) {
    ordered_json j;
    j["encoder"] = ordered_json::object();
    j["encoder"]["name"] = arch.encoder.name;
    j["encoder"]["stages"] = ordered_json::array();
    for (const auto& s : arch.encoder.stages) {
        ordered_json st;
        st["channels"] = s.channels;
        st["stride"] = s.stride;
        j["encoder"]["stages"].push_back(st);
    }
    j["decoder_channels"] = arch.decoder_channels;
    j["stages"] = ordered_json::array();
    for (const auto& s : arch.stages) {
        ordered_json st;
        st["l"] = s.l;
        st["inputs"] = ordered_json::array();
        for (const auto& in : s.inputs) {
            ordered_json e;
            e["kind"] = kind_str(in.kind);
            e["index"] = in.index;
            st["inputs"].push_back(e);
        }
        j["stages"].push_back(st);
    }
    j["output_stage"] = arch.output_stage;
    j["meta"] = ordered_json::object();
    j["meta"]["sigma"] = arch.sigma;
    j["meta"]["seed"] = arch.seed;
    if (!arch.config_digest.empty()) j["meta"]["config_digest"] = arch.config_digest;
    return j.dump(2) + "\n";
}

PrunedArchitecture architecture_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("architecture json: parse error: ") + e.what());
    }
    reject_unknown(j, {"encoder", "decoder_channels", "stages", "output_stage", "meta"}, "$");

    PrunedArchitecture arch;
    const ordered_json& enc = j.contains("encoder") ? j.at("encoder") : ordered_json::object();
    if (!j.contains("encoder")) throw std::runtime_error("architecture json: missing '$.encoder'");
    reject_unknown(enc, {"name", "stages"}, "$.encoder");
    arch.encoder.name = require_field<std::string>(enc, "name", "$.encoder");
    if (!enc.contains("stages") || !enc.at("stages").is_array()) {
        throw std::runtime_error("architecture json: '$.encoder.stages' must be an array");
    }
    int idx = 0;
    for (const auto& st : enc.at("stages")) {
        const std::string p = "$.encoder.stages[" + std::to_string(idx++) + "]";
        reject_unknown(st, {"channels", "stride"}, p);
        EncoderStageSpec s;
        s.channels = require_field<int>(st, "channels", p);
        s.stride = require_field<int>(st, "stride", p);
        arch.encoder.stages.push_back(s);
    }
    arch.decoder_channels = require_field<int>(j, "decoder_channels", "$");
    if (!j.contains("stages") || !j.at("stages").is_array()) {
        throw std::runtime_error("architecture json: '$.stages' must be an array");
    }
    idx = 0;
    for (const auto& st : j.at("stages")) {
        const std::string p = "$.stages[" + std::to_string(idx++) + "]";
        reject_unknown(st, {"l", "inputs"}, p);
        ArchStage s;
        s.l = require_field<int>(st, "l", p);
        if (!st.contains("inputs") || !st.at("inputs").is_array()) {
            throw std::runtime_error("architecture json: '" + p + ".inputs' must be an array");
        }
        int eidx = 0;
        for (const auto& in : st.at("inputs")) {
            const std::string ep = p + ".inputs[" + std::to_string(eidx++) + "]";
            reject_unknown(in, {"kind", "index"}, ep);
            FeatureRef r;
            r.kind = kind_parse(require_field<std::string>(in, "kind", ep), ep);
            r.index = require_field<int>(in, "index", ep);
            s.inputs.push_back(r);
        }
        arch.stages.push_back(std::move(s));
    }
    arch.output_stage = require_field<int>(j, "output_stage", "$");
    if (!j.contains("meta")) throw std::runtime_error("architecture json: missing '$.meta'");
    const ordered_json& meta = j.at("meta");
    reject_unknown(meta, {"sigma", "seed", "config_digest"}, "$.meta");
    arch.sigma = require_field<double>(meta, "sigma", "$.meta");
    arch.seed = require_field<long>(meta, "seed", "$.meta");
    if (meta.contains("config_digest")) {
        arch.config_digest = require_field<std::string>(meta, "config_digest", "$.meta");
    }
    arch.validate();
    return arch;
}

void export_architecture(const PrunedArchitecture& arch, const std::string& path) {
    arch.validate();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("architecture json: cannot open '" + path + "'");
    out << architecture_to_json(arch);
    if (!out.good()) throw std::runtime_error("architecture json: write to '" + path + "' failed");
}

PrunedArchitecture import_architecture(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("architecture json: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return architecture_from_json(ss.str());
}

}  // namespace sparsemask
