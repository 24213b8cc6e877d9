#include "lbsim/rules.hpp"

#include <charconv>
#include <cmath>

#include <fmt/format.h>

#include "lbsim/occupancy.hpp"

namespace lbsim {

namespace {

double parse_number(std::string_view rule, std::string_view s) {
    double v = 0.0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end || !std::isfinite(v)) {
        throw ConfigError(fmt::format("unparseable rule '{}': bad number '{}'", rule, s));
    }
    return v;
}

}  // namespace

Rule Rule::parse(std::string_view text) {
    Rule r;
    r.text_ = std::string(text);
    const auto colon = text.find(':');
    const auto head = text.substr(0, colon);
    const auto arg = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
    auto need_arg = [&] {
        if (arg.empty()) throw ConfigError(fmt::format("unparseable rule '{}': missing argument", text));
        return parse_number(text, arg);
    };
    if (colon == std::string_view::npos) {
        if (head == "sqrtlog") {
            r.form_ = Form::sqrtlog;
        } else if (head == "full") {
            r.form_ = Form::full;
        } else {
            r.form_ = Form::constant;
            r.arg_ = parse_number(text, head);
        }
        return r;
    }
    if (head == "const") {
        r.form_ = Form::constant;
    } else if (head == "pow") {
        r.form_ = Form::power;
    } else if (head == "logdiv") {
        r.form_ = Form::logdiv;
    } else if (head == "sqrtmul") {
        r.form_ = Form::sqrtmul;
    } else if (head == "batch") {
        r.form_ = Form::batch;
    } else if (head == "frac") {
        r.form_ = Form::fraction;
    } else if (head == "halfin") {
        r.form_ = Form::halfin;
    } else {
        throw ConfigError(fmt::format("unparseable rule '{}': unknown form '{}'", text, head));
    }
    r.arg_ = need_arg();
    if (r.form_ == Form::logdiv && !(r.arg_ > 0.0)) {
        throw ConfigError(fmt::format("unparseable rule '{}': divisor must be positive", text));
    }
    return r;
}

double Rule::value(int servers, const Context& ctx) const {
    const double n = servers;
    switch (form_) {
        case Form::constant: return arg_;
        case Form::power: return std::pow(n, arg_);
        case Form::sqrtlog: return std::sqrt(n) * std::log(n);
        case Form::logdiv: return std::sqrt(n) * std::log(n) / arg_;
        case Form::sqrtmul: return arg_ * std::sqrt(n);
        case Form::full: return n;
        case Form::batch: {
            const double room = 1.0 - ctx.normalized_lambda - arg_;
            if (!(room > 0.0)) throw ConfigError(fmt::format("rule '{}' needs lambda + eps < 1", text_));
            return ctx.ell / room;
        }
        case Form::fraction: return arg_ * n;
        case Form::halfin: return n - arg_ * std::sqrt(n);
    }
    return 0.0;
}

int Rule::integer(int servers, const Context& ctx) const {
    // Absorb floating noise so that e.g. 0.7 * 100 does not round up to 71.
    return static_cast<int>(std::ceil(value(servers, ctx) - 1e-9));
}

}  // namespace lbsim
