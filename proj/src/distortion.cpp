#include "popo/distortion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "popo/common.hpp"

namespace popo::critic {

namespace {
constexpr double kQuantileClamp = 1e-8;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("normal_quantile: p must lie in (0, 1)");
    // Acklam's coefficients.
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double low = 0.02425;
    double x;
    if (p < low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // Halley refinement against the erfc-based CDF.
    const double e = normal_cdf(x) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

Distortion::Distortion(Kind kind, double zeta) : kind_(kind), zeta_(kind == Kind::identity ? 0.0 : zeta) {
    if (!std::isfinite(zeta)) throw ConfigError("distortion parameter must be finite");
    if (kind == Kind::cvar && !(zeta > 0.0 && zeta <= 1.0)) throw ConfigError("cvar needs zeta in (0, 1]");
    if (kind == Kind::cpw && !(zeta > 0.0)) throw ConfigError("cpw needs zeta > 0");
}

double Distortion::operator()(double tau) const {
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("distortion input must lie in [0, 1]");
    double out = tau;
    switch (kind_) {
        case Kind::identity: return tau;
        case Kind::wang: {
            if (zeta_ == 0.0) return tau;
            const double t = std::clamp(tau, kQuantileClamp, 1.0 - kQuantileClamp);
            out = normal_cdf(normal_quantile(t) + zeta_);
            break;
        }
        case Kind::cpw: {
            if (tau == 0.0 || tau == 1.0) return tau;
            const double num = std::pow(tau, zeta_);
            out = num / std::pow(num + std::pow(1.0 - tau, zeta_), 1.0 / zeta_);
            break;
        }
        case Kind::cvar: out = zeta_ * tau; break;
    }
    return std::clamp(out, 0.0, 1.0);
}

std::string Distortion::name() const {
    if (kind_ == Kind::identity) return "identity";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s(%g)", to_string(kind_).c_str(), zeta_);
    return buf;
}

Distortion::Kind parse_distortion_kind(std::string_view name) {
    if (name == "identity") return Distortion::Kind::identity;
    if (name == "wang") return Distortion::Kind::wang;
    if (name == "cpw") return Distortion::Kind::cpw;
    if (name == "cvar") return Distortion::Kind::cvar;
    throw ConfigError("unknown distortion kind '" + std::string(name) + "'");
}

std::string to_string(Distortion::Kind kind) {
    switch (kind) {
        case Distortion::Kind::identity: return "identity";
        case Distortion::Kind::wang: return "wang";
        case Distortion::Kind::cpw: return "cpw";
        case Distortion::Kind::cvar: return "cvar";
    }
    return "identity";
}

Distortion distortion_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("distortion must be an object {kind, zeta}");
    for (const auto& [key, _] : j.items()) {
        if (key != "kind" && key != "zeta") throw ConfigError("unknown distortion key '" + key + "'");
    }
    const auto kind = parse_distortion_kind(j.value("kind", std::string("wang")));
    const double zeta = j.value("zeta", kind == Distortion::Kind::wang ? -0.75 : 1.0);
    return {kind, zeta};
}

nlohmann::json to_json(const Distortion& d) { return {{"kind", to_string(d.kind())}, {"zeta", d.zeta()}}; }

}  // namespace popo::critic
