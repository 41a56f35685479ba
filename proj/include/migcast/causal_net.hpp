#pragma once

// Conditional linear-Gaussian network:
//
//   Province -> {Sponsor, Refugee, Economic} -> Total
//   [Crisis] -> {Refugee, Economic}            (optional, hidden)
//
// Streams are independent Gaussians given the discrete parents. Total is
// either their exact sum (Structural) or an independent per-province Gaussian
// (Fitted). Soft findings are Normal virtual observations of a node, so every
// discrete configuration stays jointly Gaussian and inference is exact:
// enumerate (province, crisis) states and run a linear-Gaussian update in each.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "migcast/errors.hpp"
#include "migcast/series.hpp"

namespace migcast::bn {

struct Gaussian {
    double mean = 0.0;
    double sd = 1.0;
};

inline double normal_pdf(double x, double mean, double sd) {
    const double z = (x - mean) / sd;
    return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

inline double normal_log_pdf(double x, double mean, double sd) {
    const double z = (x - mean) / sd;
    return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

enum class TotalMode { Structural, Fitted };

inline std::string_view to_string(TotalMode m) { return m == TotalMode::Structural ? "structural" : "fitted"; }

inline TotalMode parse_total_mode(std::string_view s) {
    const auto t = lower(s);
    if (t == "structural") return TotalMode::Structural;
    if (t == "fitted") return TotalMode::Fitted;
    throw ConfigError("total mode must be `structural` or `fitted`, got `" + std::string(s) + "`");
}

struct CrisisSpec {
    double probability = 0.0;
    double k_refugee = 1.0;
    double k_economic = 1.0;

    void validate() const {
        if (!(probability >= 0.0 && probability <= 1.0)) throw ConfigError("crisis probability must lie in [0,1]");
        if (!(k_refugee > 0.0) || !(k_economic > 0.0)) throw ConfigError("crisis factors must be > 0");
    }
};

struct ProvinceParams {
    Province province = Province::ON;
    double prior = 0.1;
    std::array<Gaussian, kComponentCount> streams{};
    std::optional<Gaussian> total;  // Fitted mode only
    // Per-entry provenance tag carried through the network file ("published"/"derived"/"fitted").
    std::array<std::string, kComponentCount> source{};
    std::string total_source;
};

/// A reference value kept alongside the parameters, e.g. a published Total.
struct Reference {
    Province province = Province::ON;
    Stream node = Stream::Total;
    double mean = 0.0;
    std::optional<double> sd;
};

struct CGNetwork {
    std::vector<ProvinceParams> states;
    TotalMode mode = TotalMode::Structural;
    std::optional<CrisisSpec> crisis;
    std::vector<Reference> references;

    void validate() const {
        if (states.empty()) throw ConfigError("network has no provinces");
        double sum = 0.0;
        std::array<bool, kProvinceCount> seen{};
        for (const auto& st : states) {
            if (seen[index_of(st.province)])
                throw ConfigError("province " + std::string(code(st.province)) + " listed twice");
            seen[index_of(st.province)] = true;
            if (!(st.prior >= 0.0)) throw ConfigError("negative prior for " + std::string(code(st.province)));
            sum += st.prior;
            for (auto s : kComponents) {
                const auto& g = st.streams[index_of(s)];
                if (!(g.sd > 0.0) || !std::isfinite(g.mean))
                    throw ConfigError("invalid " + std::string(name(s)) + " parameters for " +
                                      std::string(code(st.province)));
            }
            if (mode == TotalMode::Fitted && (!st.total || !(st.total->sd > 0.0)))
                throw ConfigError("fitted network lacks Total parameters for " + std::string(code(st.province)));
            if (mode == TotalMode::Structural && st.total)
                throw ConfigError("structural network must not store Total parameters (" +
                                  std::string(code(st.province)) + ")");
        }
        if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("province prior sums to " + std::to_string(sum));
        if (crisis) crisis->validate();
    }

    std::optional<std::size_t> find(Province p) const {
        for (std::size_t i = 0; i < states.size(); ++i)
            if (states[i].province == p) return i;
        return std::nullopt;
    }

    const ProvinceParams& at(Province p) const {
        auto i = find(p);
        if (!i) throw ConfigError("province " + std::string(code(p)) + " is not in the network");
        return states[*i];
    }
};

// ---------------------------------------------------------------------------
// Evidence

struct SoftFinding {
    Stream node = Stream::Total;
    double mean = 0.0;
    double sd = 1.0;
};

struct Evidence {
    std::optional<Province> province;
    std::vector<SoftFinding> soft;

    Evidence& hard(Province p) {
        if (province) throw ConfigError("province already has a finding");
        province = p;
        return *this;
    }

    Evidence& add(SoftFinding f) {
        if (!(f.sd > 0.0) || !std::isfinite(f.sd) || !std::isfinite(f.mean))
            throw ConfigError("soft finding on " + std::string(name(f.node)) + " needs a finite mean and std > 0");
        for (const auto& g : soft)
            if (g.node == f.node) throw ConfigError(std::string(name(f.node)) + " already has a finding");
        soft.push_back(f);
        return *this;
    }

    const SoftFinding* finding(Stream s) const {
        for (const auto& f : soft)
            if (f.node == s) return &f;
        return nullptr;
    }
};

// ---------------------------------------------------------------------------
// Mixtures

struct GaussianMixture {
    struct Component {
        double weight = 0.0;
        double mean = 0.0;
        double sd = 1.0;
        Province province = Province::ON;
        bool crisis = false;
    };
    std::vector<Component> components;

    double mean() const {
        double m = 0.0;
        for (const auto& c : components) m += c.weight * c.mean;
        return m;
    }

    double variance() const {
        const double mu = mean();
        double v = 0.0;
        for (const auto& c : components) v += c.weight * (c.sd * c.sd + (c.mean - mu) * (c.mean - mu));
        return v;
    }

    double sd() const { return std::sqrt(variance()); }

    double density(double x) const {
        double d = 0.0;
        for (const auto& c : components) d += c.weight * normal_pdf(x, c.mean, c.sd);
        return d;
    }
};

// ---------------------------------------------------------------------------
// Parameters

inline Gaussian structural_total(const std::array<Gaussian, kComponentCount>& s) {
    double mu = 0.0, var = 0.0;
    for (const auto& g : s) {
        mu += g.mean;
        var += g.sd * g.sd;
    }
    return {mu, std::sqrt(var)};
}

/// Stream conditional with the crisis inactive.
inline Gaussian province_conditional(const CGNetwork& net, Province p, Stream node) {
    const auto& st = net.at(p);
    if (node != Stream::Total) return st.streams[index_of(node)];
    if (net.mode == TotalMode::Fitted) return *st.total;
    return structural_total(st.streams);
}

namespace detail {

inline std::array<Gaussian, kComponentCount> shifted(const std::array<Gaussian, kComponentCount>& s,
                                                     const CrisisSpec* c) {
    auto out = s;
    if (c) {
        out[index_of(Stream::Refugee)].mean *= c->k_refugee;
        out[index_of(Stream::Economic)].mean *= c->k_economic;
    }
    return out;
}

// One discrete configuration after conditioning: log of prior*likelihood and
// the Gaussian posterior over the hidden vector.
struct Branch {
    std::size_t state = 0;
    bool crisis = false;
    double log_weight = 0.0;
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

inline std::size_t hidden_dim(const CGNetwork& net) { return net.mode == TotalMode::Structural ? 3 : 4; }

inline Eigen::RowVectorXd observation_row(const CGNetwork& net, Stream node) {
    Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(hidden_dim(net)));
    if (node != Stream::Total)
        h(static_cast<Eigen::Index>(index_of(node))) = 1.0;
    else if (net.mode == TotalMode::Structural)
        h << 1.0, 1.0, 1.0;
    else
        h(3) = 1.0;
    return h;
}

inline std::vector<Branch> condition(const CGNetwork& net, const Evidence& ev) {
    net.validate();
    const std::size_t dim = hidden_dim(net);
    std::vector<Branch> branches;
    const int crisis_states = net.crisis ? 2 : 1;
    for (std::size_t i = 0; i < net.states.size(); ++i) {
        const auto& st = net.states[i];
        if (ev.province && *ev.province != st.province) continue;
        for (int c = 0; c < crisis_states; ++c) {
            double w = st.prior;
            if (net.crisis) w *= c ? net.crisis->probability : 1.0 - net.crisis->probability;
            if (w <= 0.0) continue;
            const auto params = shifted(st.streams, c ? &*net.crisis : nullptr);
            Branch b{i, c == 1, std::log(w), Eigen::VectorXd(dim), Eigen::MatrixXd::Zero(dim, dim)};
            for (std::size_t k = 0; k < kComponentCount; ++k) {
                b.mean(static_cast<Eigen::Index>(k)) = params[k].mean;
                b.cov(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) = params[k].sd * params[k].sd;
            }
            if (dim == 4) {
                b.mean(3) = st.total->mean;
                b.cov(3, 3) = st.total->sd * st.total->sd;
            }
            for (const auto& f : ev.soft) {
                const auto h = observation_row(net, f.node);
                const double pred = h * b.mean;
                const Eigen::VectorXd sh = b.cov * h.transpose();
                const double var = h.dot(sh) + f.sd * f.sd;
                b.log_weight += normal_log_pdf(f.mean, pred, std::sqrt(var));
                const Eigen::VectorXd gain = sh / var;
                b.mean += gain * (f.mean - pred);
                b.cov -= gain * sh.transpose();
                b.cov = 0.5 * (b.cov + b.cov.transpose());
            }
            branches.push_back(std::move(b));
        }
    }
    if (branches.empty()) throw InconsistentEvidence("evidence has zero probability under the network");
    double top = -std::numeric_limits<double>::infinity();
    for (const auto& b : branches) top = std::max(top, b.log_weight);
    if (!std::isfinite(top)) throw InconsistentEvidence("evidence has zero likelihood under every province");
    double z = 0.0;
    for (const auto& b : branches) z += std::exp(b.log_weight - top);
    for (auto& b : branches) b.log_weight = std::exp(b.log_weight - top) / z;  // now a normalised weight
    std::erase_if(branches, [](const Branch& b) { return b.log_weight == 0.0; });
    return branches;
}

}  // namespace detail

/// Marginal likelihood of a Normal(m, s) virtual finding given the province:
/// N(m; mu, sqrt(s^2 + sigma^2)), averaged over the crisis state when present.
inline double soft_evidence_likelihood(const CGNetwork& net, Province p, const SoftFinding& f) {
    const auto& st = net.at(p);
    auto lik = [&](const std::array<Gaussian, kComponentCount>& streams) {
        Gaussian g;
        if (f.node != Stream::Total)
            g = streams[index_of(f.node)];
        else if (net.mode == TotalMode::Fitted)
            g = *st.total;
        else
            g = structural_total(streams);
        return normal_pdf(f.mean, g.mean, std::sqrt(f.sd * f.sd + g.sd * g.sd));
    };
    if (!net.crisis) return lik(st.streams);
    const double pi = net.crisis->probability;
    return (1.0 - pi) * lik(st.streams) + pi * lik(detail::shifted(st.streams, &*net.crisis));
}

/// Posterior over the network's provinces, aligned with `net.states`.
inline std::vector<double> posterior_province(const CGNetwork& net, const Evidence& ev) {
    const auto branches = detail::condition(net, ev);
    std::vector<double> post(net.states.size(), 0.0);
    for (const auto& b : branches) post[b.state] += b.log_weight;
    return post;
}

inline GaussianMixture posterior_node(const CGNetwork& net, Stream target, const Evidence& ev) {
    const auto branches = detail::condition(net, ev);
    const auto h = detail::observation_row(net, target);
    GaussianMixture mix;
    for (const auto& b : branches) {
        const double var = std::max(h.dot(b.cov * h.transpose()), 0.0);
        mix.components.push_back({b.log_weight, h * b.mean, std::sqrt(var), net.states[b.state].province, b.crisis});
    }
    return mix;
}

struct TotalDecomposition {
    std::array<double, kComponentCount> stream_means{};
    double total_mean = 0.0;
};

/// Posterior stream means given a soft finding on Total. Requires the
/// structural sum so that the streams are coupled through the finding.
inline TotalDecomposition decompose_total(const CGNetwork& net, const Evidence& ev) {
    if (net.mode != TotalMode::Structural)
        throw ModeError("decompose_total needs a structural network (Total = Sponsor + Refugee + Economic); "
                        "refit or reload with total mode `structural`");
    if (!ev.finding(Stream::Total)) throw ConfigError("decompose_total needs a soft finding on Total");
    const auto branches = detail::condition(net, ev);
    TotalDecomposition out;
    for (const auto& b : branches) {
        for (std::size_t k = 0; k < kComponentCount; ++k)
            out.stream_means[k] += b.log_weight * b.mean(static_cast<Eigen::Index>(k));
        out.total_mean += b.log_weight * b.mean.sum();
    }
    return out;
}

/// Fixes the hidden crisis state. The result carries no crisis spec.
inline CGNetwork apply_crisis(const CGNetwork& net, bool active) {
    if (!net.crisis) throw ConfigError("network has no crisis specification");
    CGNetwork out = net;
    out.crisis.reset();
    if (active)
        for (auto& st : out.states) st.streams = detail::shifted(st.streams, &*net.crisis);
    return out;
}

// ---------------------------------------------------------------------------
// Fitting

inline constexpr double kMinSigma = 1e-6;

/// Per-province sample mean and unbiased std of each stream. Total is fitted
/// as its own node when any Total series is present.
inline CGNetwork fit_parameters(const std::vector<MonthlySeries>& data, std::vector<std::string>* warnings = nullptr) {
    bool have_total = false;
    for (const auto& s : data) have_total |= s.stream == Stream::Total;
    CGNetwork net;
    net.mode = have_total ? TotalMode::Fitted : TotalMode::Structural;
    auto fit = [&](Province p, Stream s) {
        const auto* series = find_series(data, p, s);
        if (!series) throw FitError("no " + std::string(name(s)) + " series for " + std::string(code(p)));
        const auto& v = series->values;
        if (v.size() < 2)
            throw FitError(std::string(name(s)) + " series for " + std::string(code(p)) + " needs at least 2 months");
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
        if (sd < kMinSigma) {
            if (warnings)
                warnings->push_back(std::string(code(p)) + " " + std::string(name(s)) +
                                    ": zero variance, std floored at 1e-6");
            sd = kMinSigma;
        }
        return Gaussian{mean, sd};
    };
    for (auto p : kProvinces) {
        ProvinceParams st;
        st.province = p;
        st.prior = 1.0 / static_cast<double>(kProvinceCount);
        for (auto s : kComponents) {
            st.streams[index_of(s)] = fit(p, s);
            st.source[index_of(s)] = "fitted";
        }
        if (have_total) {
            st.total = fit(p, Stream::Total);
            st.total_source = "fitted";
        }
        net.states.push_back(std::move(st));
    }
    return net;
}

// ---------------------------------------------------------------------------
// Network file (JSON)
//
// {
//   "format": "migcast-network/1",
//   "units": "hundreds of persons per month",
//   "total_mode": "structural" | "fitted",
//   "provinces": [
//     { "code": "ON", "name": "Ontario", "prior": 0.1,
//       "sponsor":  { "mean": 30.0, "std": 12.0, "source": "derived" },
//       "refugee":  { ... }, "economic": { ... },
//       "total":    { ... }                  // fitted mode only
//     }, ...
//   ],
//   "crisis": null | { "probability": p, "k_refugee": k, "k_economic": k },
//   "references": [ { "province": "ON", "node": "total", "mean": 114.15, "std": 31.8 }, ... ]
// }

inline constexpr const char* kNetworkFormat = "migcast-network/1";

namespace detail {

inline nlohmann::ordered_json gaussian_json(const Gaussian& g, const std::string& source) {
    nlohmann::ordered_json j;
    j["mean"] = g.mean;
    j["std"] = g.sd;
    if (!source.empty()) j["source"] = source;
    return j;
}

inline Gaussian gaussian_from(const nlohmann::json& j, const std::string& where, std::string* source) {
    if (!j.is_object() || !j.contains("mean") || !j.contains("std") || !j["mean"].is_number() ||
        !j["std"].is_number())
        throw ParseError(where + ": expected {\"mean\": number, \"std\": number}");
    if (source && j.contains("source")) *source = j["source"].get<std::string>();
    return {j["mean"].get<double>(), j["std"].get<double>()};
}

}  // namespace detail

inline std::string to_json(const CGNetwork& net) {
    nlohmann::ordered_json j;
    j["format"] = kNetworkFormat;
    j["units"] = "hundreds of persons per month";
    j["total_mode"] = std::string(to_string(net.mode));
    auto provinces = nlohmann::ordered_json::array();
    for (const auto& st : net.states) {
        nlohmann::ordered_json p;
        p["code"] = std::string(code(st.province));
        p["name"] = std::string(full_name(st.province));
        p["prior"] = st.prior;
        for (auto s : kComponents)
            p[lower(name(s))] = detail::gaussian_json(st.streams[index_of(s)], st.source[index_of(s)]);
        if (st.total) p["total"] = detail::gaussian_json(*st.total, st.total_source);
        provinces.push_back(std::move(p));
    }
    j["provinces"] = std::move(provinces);
    if (net.crisis) {
        j["crisis"] = {{"probability", net.crisis->probability},
                       {"k_refugee", net.crisis->k_refugee},
                       {"k_economic", net.crisis->k_economic}};
    } else {
        j["crisis"] = nullptr;
    }
    auto refs = nlohmann::ordered_json::array();
    for (const auto& r : net.references) {
        nlohmann::ordered_json e;
        e["province"] = std::string(code(r.province));
        e["node"] = lower(name(r.node));
        e["mean"] = r.mean;
        if (r.sd) e["std"] = *r.sd;
        refs.push_back(std::move(e));
    }
    j["references"] = std::move(refs);
    return j.dump(2) + "\n";
}

inline CGNetwork from_json(const std::string& text, const std::string& origin = "<network>") {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(origin + ": " + e.what());
    }
    try {
        if (j.value("format", "") != kNetworkFormat)
            throw ParseError(origin + ": format must be \"" + kNetworkFormat + "\"");
        CGNetwork net;
        net.mode = parse_total_mode(j.at("total_mode").get<std::string>());
        for (const auto& p : j.at("provinces")) {
            ProvinceParams st;
            const auto c = p.at("code").get<std::string>();
            auto prov = parse_province(c);
            if (!prov) throw ParseError(origin + ": unknown province `" + c + "`");
            st.province = *prov;
            st.prior = p.at("prior").get<double>();
            for (auto s : kComponents) {
                const auto key = lower(name(s));
                if (!p.contains(key)) throw ParseError(origin + ": " + c + " lacks `" + key + "`");
                st.streams[index_of(s)] = detail::gaussian_from(p[key], origin + ": " + c + "." + key,
                                                                &st.source[index_of(s)]);
            }
            if (p.contains("total")) st.total = detail::gaussian_from(p["total"], origin + ": " + c + ".total",
                                                                      &st.total_source);
            net.states.push_back(std::move(st));
        }
        if (j.contains("crisis") && !j["crisis"].is_null()) {
            const auto& c = j["crisis"];
            net.crisis = CrisisSpec{c.at("probability").get<double>(), c.at("k_refugee").get<double>(),
                                    c.at("k_economic").get<double>()};
        }
        if (j.contains("references")) {
            for (const auto& r : j["references"]) {
                Reference ref;
                const auto c = r.at("province").get<std::string>();
                auto prov = parse_province(c);
                auto node = parse_stream(r.at("node").get<std::string>());
                if (!prov || !node) throw ParseError(origin + ": bad reference entry for `" + c + "`");
                ref.province = *prov;
                ref.node = *node;
                ref.mean = r.at("mean").get<double>();
                if (r.contains("std")) ref.sd = r["std"].get<double>();
                net.references.push_back(ref);
            }
        }
        net.validate();
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(origin + ": " + e.what());
    }
}

inline CGNetwork load_network(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open network file " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json(text, path);
}

inline void save_network(const std::string& path, const CGNetwork& net) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write network file " + path);
    out << to_json(net);
}

}  // namespace migcast::bn
