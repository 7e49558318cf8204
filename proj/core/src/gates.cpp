#include "sparsemask/gates.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sparsemask {

namespace {

char kind_letter(FeatureKind k) {
    switch (k) {
        case FeatureKind::encoder: return 'E';
        case FeatureKind::decoder: return 'D';
        case FeatureKind::global: return 'G';
    }
    return '?';
}

FeatureKind kind_from_letter(const std::string& s, const std::string& path) {
    if (s == "E") return FeatureKind::encoder;
    if (s == "D") return FeatureKind::decoder;
    if (s == "G") return FeatureKind::global;
    throw std::runtime_error("gate csv '" + path + "': unknown source_kind '" + s + "'");
}

}  // namespace

void write_gate_csv(const GateMatrix& gm, const std::string& path,
                    const std::string& config_digest) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("gate csv: cannot open '" + path + "' for writing");
    if (!config_digest.empty()) out << "# config_digest=" << config_digest << "\n";
    out << "stage,source_kind,source_index,gate_value\n";
    char buf[64];
    for (const auto& e : gm.entries) {
        std::snprintf(buf, sizeof(buf), "%.17g", e.value);
        out << e.stage << "," << kind_letter(e.source.kind) << "," << e.source.index << ","
            << buf << "\n";
    }
    if (!out.good()) throw std::runtime_error("gate csv: write to '" + path + "' failed");
}

GateMatrix read_gate_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("gate csv: cannot open '" + path + "'");
    GateMatrix gm;
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;  // column header
            continue;
        }
        std::istringstream ls(line);
        std::string stage_s, kind_s, index_s, value_s;
        if (!std::getline(ls, stage_s, ',') || !std::getline(ls, kind_s, ',') ||
            !std::getline(ls, index_s, ',') || !std::getline(ls, value_s)) {
            throw std::runtime_error("gate csv '" + path + "': malformed row '" + line + "'");
        }
        GateEntry e;
        e.stage = std::stoi(stage_s);
        e.source.kind = kind_from_letter(kind_s, path);
        e.source.index = std::stoi(index_s);
        e.value = std::stod(value_s);
        gm.entries.push_back(e);
        gm.num_stages = std::max(gm.num_stages, e.stage);
    }
    return gm;
}

}  // namespace sparsemask
