#pragma once

// Parameter checkpoints as plain text:
//
//   migcast-checkpoint 1
//   <tensor count>
//   <name> <rank> <dim0> ... <dimN-1>
//   <value> <value> ...            (one line per tensor)
//
// Values use the shortest decimal form that round-trips to the same double,
// so save/load is bit-exact.

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "migcast/errors.hpp"
#include "migcast/optim.hpp"

namespace migcast::ad {

inline constexpr const char* kCheckpointMagic = "migcast-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline void save_parameters(std::ostream& out, const ParameterSet& params) {
    out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n' << params.size() << '\n';
    char buf[64];
    for (const auto& [name, t] : params) {
        out << name << ' ' << t.rank();
        for (auto d : t.shape()) out << ' ' << d;
        out << '\n';
        bool first = true;
        for (double v : t.data()) {
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
            if (!first) out << ' ';
            out.write(buf, ptr - buf);
            first = false;
        }
        out << '\n';
    }
}

inline ParameterSet load_parameters(std::istream& in, bool requires_grad = true) {
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != kCheckpointMagic)
        throw ParseError("not a migcast checkpoint");
    if (version != kCheckpointVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version));
    std::size_t count = 0;
    if (!(in >> count)) throw ParseError("checkpoint: missing tensor count");
    ParameterSet params;
    for (std::size_t k = 0; k < count; ++k) {
        std::string name;
        std::size_t rank = 0;
        if (!(in >> name >> rank) || rank == 0) throw ParseError("checkpoint: bad tensor header #" + std::to_string(k));
        Shape shape(rank);
        for (auto& d : shape)
            if (!(in >> d)) throw ParseError("checkpoint: bad shape for " + name);
        std::vector<double> values(numel(shape));
        std::string token;
        for (auto& v : values) {
            if (!(in >> token)) throw ParseError("checkpoint: truncated values for " + name);
            auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
            if (ec != std::errc{} || ptr != token.data() + token.size())
                throw ParseError("checkpoint: bad value `" + token + "` in " + name);
        }
        params.emplace(name, Tensor::from(std::move(shape), std::move(values), requires_grad));
    }
    return params;
}

inline void save_parameters(const std::string& path, const ParameterSet& params) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write checkpoint " + path);
    save_parameters(out, params);
}

inline ParameterSet load_parameters(const std::string& path, bool requires_grad = true) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open checkpoint " + path);
    return load_parameters(in, requires_grad);
}

}  // namespace migcast::ad
