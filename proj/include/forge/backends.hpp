#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "forge/error.hpp"
#include "forge/image.hpp"

namespace forge {

// The three model roles the pipeline talks to. These are role interfaces,
// not model bindings: production deployments sit behind the HTTP protocol
// in http_backend.hpp, desk-scale runs use the toy implementations.

class TextToImageBackend {
public:
    virtual ~TextToImageBackend() = default;

    virtual std::vector<int> supported_resolutions() const = 0;
    virtual bool supports_text_encoder_gradients() const = 0;

    // Must be deterministic for a fixed (prompt, seed) pair.
    virtual Image generate(const std::string& prompt, int resolution, std::uint64_t seed) = 0;
};

class VisionLanguageEmbedder {
public:
    virtual ~VisionLanguageEmbedder() = default;

    virtual std::size_t embedding_dim() const = 0;
    virtual std::vector<double> embed_image(const Image& image) = 0;
    virtual std::vector<double> embed_text(const std::string& text) = 0;
};

class InstructionLLMBackend {
public:
    virtual ~InstructionLLMBackend() = default;

    // Returns exactly n non-empty strings or throws BackendError.
    virtual std::vector<std::string> complete(const std::string& instruction, int n) = 0;
};

inline void check_resolution(const TextToImageBackend& backend, int resolution) {
    for (int r : backend.supported_resolutions())
        if (r == resolution) return;
    throw BackendError(BackendError::Kind::unsupported,
                       "unsupported resolution " + std::to_string(resolution));
}

}  // namespace forge
