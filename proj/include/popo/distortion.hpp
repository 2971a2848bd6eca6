#pragma once

#include <json.hpp>

#include <string>
#include <string_view>

namespace popo::critic {

double normal_cdf(double x);

/// Inverse standard normal CDF; rational approximation refined by one Halley step.
/// Accurate to well below 1e-8 on (1e-8, 1 - 1e-8).
double normal_quantile(double p);

/// Distortion risk measure beta: [0,1] -> [0,1] reweighting quantile levels.
///   wang:  Phi(Phi^-1(tau) + zeta)        zeta < 0 pessimistic
///   cpw:   tau^z / (tau^z + (1-tau)^z)^(1/z)
///   cvar:  zeta * tau                     zeta in (0, 1]
class Distortion {
public:
    enum class Kind { identity, wang, cpw, cvar };

    Distortion() = default;
    Distortion(Kind kind, double zeta);

    static Distortion identity() { return {}; }
    static Distortion wang(double zeta) { return {Kind::wang, zeta}; }
    static Distortion cpw(double zeta) { return {Kind::cpw, zeta}; }
    static Distortion cvar(double zeta) { return {Kind::cvar, zeta}; }

    Kind kind() const { return kind_; }
    double zeta() const { return zeta_; }

    /// Throws ConfigError for tau outside [0, 1].
    double operator()(double tau) const;

    std::string name() const;

private:
    Kind kind_ = Kind::identity;
    double zeta_ = 0.0;
};

/// {"kind": "wang"|"cpw"|"cvar"|"identity", "zeta": real}
Distortion distortion_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Distortion& d);
Distortion::Kind parse_distortion_kind(std::string_view name);
std::string to_string(Distortion::Kind kind);

}  // namespace popo::critic
