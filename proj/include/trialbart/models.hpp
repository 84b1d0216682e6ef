#pragma once

#include <memory>
#include <stdexcept>
#include <string>

#include "trialbart/bart.hpp"
#include "trialbart/linear_models.hpp"

namespace trialbart {

// The six fitting strategies compared by the simulation harness. The "-"
// variants ignore external rows entirely.
enum class Method {
  kBart,
  kHlm,
  kNnhm,
  kBartNoBorrow,
  kHlmNoBorrow,
  kNnhmNoBorrow,
};

inline std::string method_name(Method m) {
  switch (m) {
    case Method::kBart: return "BART";
    case Method::kHlm: return "HLM";
    case Method::kNnhm: return "NNHM";
    case Method::kBartNoBorrow: return "BART-";
    case Method::kHlmNoBorrow: return "HLM-";
    case Method::kNnhmNoBorrow: return "NNHM-";
  }
  throw std::logic_error("unknown method");
}

inline Method parse_method(const std::string& name) {
  if (name == "bart" || name == "BART") return Method::kBart;
  if (name == "hlm" || name == "HLM") return Method::kHlm;
  if (name == "nnhm" || name == "NNHM") return Method::kNnhm;
  if (name == "bart-" || name == "BART-") return Method::kBartNoBorrow;
  if (name == "hlm-" || name == "HLM-") return Method::kHlmNoBorrow;
  if (name == "nnhm-" || name == "NNHM-") return Method::kNnhmNoBorrow;
  throw std::invalid_argument("unknown method '" + name +
                              "' (expected bart, hlm, nnhm, bart-, hlm-, or nnhm-)");
}

inline bool method_uses_external(Method m) {
  return m == Method::kBart || m == Method::kHlm || m == Method::kNnhm;
}

struct FitOptions {
  BartHyper bart;
  LinearModelOptions linear;
};

// The no-borrow variants: drop rows with source >= 1 and fit the matching
// model without source terms.
inline std::unique_ptr<PosteriorDraws> fit_no_borrow(Method method, const TrialDataset& data,
                                                     const FitOptions& options,
                                                     const McmcConfig& mcmc) {
  switch (method) {
    case Method::kBartNoBorrow:
      return fit_bart(data, options.bart, mcmc, /*use_external=*/false);
    case Method::kHlmNoBorrow:
      return fit_hlm_no_borrow(data, mcmc, options.linear);
    case Method::kNnhmNoBorrow:
      return fit_nnhm_no_borrow(data, mcmc, options.linear);
    default:
      throw std::invalid_argument("fit_no_borrow: not a no-borrow method");
  }
}

inline std::unique_ptr<PosteriorDraws> fit_method(Method method, const TrialDataset& data,
                                                  const FitOptions& options,
                                                  const McmcConfig& mcmc) {
  switch (method) {
    case Method::kBart:
      return fit_bart(data, options.bart, mcmc, /*use_external=*/true);
    case Method::kHlm:
      return fit_hlm(data, mcmc, options.linear);
    case Method::kNnhm:
      return fit_nnhm(data, mcmc, options.linear);
    default:
      return fit_no_borrow(method, data, options, mcmc);
  }
}

}  // namespace trialbart
