#pragma once

#include <string>
#include <string_view>

namespace lbsim {

/// Quantities some rules depend on besides N.
struct RuleContext {
    double normalized_lambda = 0.0;  // lambda(N)/N
    int ell = 1;
};

/// A named scaling rule f(N), as written in experiment configs.
///
///   "K" or "const:K"   K
///   "pow:a"            N^a
///   "sqrtlog"          sqrt(N) ln N
///   "logdiv:w"         sqrt(N) ln N / w
///   "sqrtmul:g"        g sqrt(N)
///   "full"             N
///   "batch:eps"        ell(N) / (1 - lambda - eps)   (d only; needs context)
///   "frac:r"           r N                          (arrival rates)
///   "halfin:beta"      N - beta sqrt(N)             (arrival rates)
///
/// Integer parameters take the ceiling of the rule value.
class Rule {
public:
    Rule() = default;
    static Rule parse(std::string_view text);

    using Context = RuleContext;

    double value(int servers, const Context& ctx = {}) const;
    int integer(int servers, const Context& ctx = {}) const;

    const std::string& text() const noexcept { return text_; }
    bool needs_batch_context() const noexcept { return form_ == Form::batch; }

private:
    enum class Form { constant, power, sqrtlog, logdiv, sqrtmul, full, batch, fraction, halfin };
    Form form_ = Form::constant;
    double arg_ = 0.0;
    std::string text_ = "0";
};

}  // namespace lbsim
