#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "forge/error.hpp"

namespace forge {

// Table-3 fine-tuning options for the classifier. The *_encoder variants
// exist to reproduce their failure modes in the ablation harness.
enum class Strategy {
    prompts_only,
    sync_prompts_encoder,
    encoder_then_prompts,
    prompts_then_encoder,
    prompts_then_gff,
    sync_prompts_gff,
};

inline const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::prompts_only: return "prompts_only";
        case Strategy::sync_prompts_encoder: return "sync_prompts_encoder";
        case Strategy::encoder_then_prompts: return "encoder_then_prompts";
        case Strategy::prompts_then_encoder: return "prompts_then_encoder";
        case Strategy::prompts_then_gff: return "prompts_then_gff";
        case Strategy::sync_prompts_gff: return "sync_prompts_gff";
    }
    return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "prompts_only") return Strategy::prompts_only;
    if (s == "sync_prompts_encoder") return Strategy::sync_prompts_encoder;
    if (s == "encoder_then_prompts") return Strategy::encoder_then_prompts;
    if (s == "prompts_then_encoder") return Strategy::prompts_then_encoder;
    if (s == "prompts_then_gff") return Strategy::prompts_then_gff;
    if (s == "sync_prompts_gff") return Strategy::sync_prompts_gff;
    throw ConfigError("unknown strategy: '" + s + "'");
}

// Pipeline hyper-parameters. Defaults follow the reference configuration:
// lambda 0.5, two objects per image, 200 positives per category, asymmetric
// focusing gamma- = 4 / gamma+ = 0, top-k 7 when fine-grained filtering is
// enabled.
struct PipelineConfig {
    double lambda_threshold = 0.5;
    int objects_per_image_j = 2;
    int positives_per_category_K = 200;
    std::optional<int> topk_fine_grained;  // engages the fine-grained policy
    double gamma_plus = 0.0;
    double gamma_minus = 4.0;
    double tau = 0.07;
    std::uint64_t seed = 0;
    Strategy strategy = Strategy::sync_prompts_gff;

    void validate() const {
        if (!(lambda_threshold > 0.0 && lambda_threshold < 1.0))
            throw ConfigError("lambda_threshold must lie in (0,1)");
        if (objects_per_image_j < 1) throw ConfigError("objects_per_image_j must be >= 1");
        if (positives_per_category_K < 1) throw ConfigError("positives_per_category_K must be >= 1");
        if (topk_fine_grained && *topk_fine_grained < 1) throw ConfigError("topk_fine_grained must be >= 1");
        if (gamma_plus < 0.0 || gamma_minus < 0.0) throw ConfigError("gamma exponents must be >= 0");
        if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    }
};

}  // namespace forge
