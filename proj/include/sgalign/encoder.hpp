#pragma once

#include <cstdint>
#include <vector>

#include "sgalign/graph_tokens.hpp"
#include "sgalign/rng.hpp"
#include "sgalign/tensor.hpp"

namespace sgalign {

struct EncoderConfig {
    std::size_t layers = 6;
    std::size_t heads = 8;
    std::size_t model_dim = 512;
    std::size_t ffn_dim = 2048;
    double eps = 1e-5;
    // re-add structural/positional encodings at every layer's Q/K
    // construction (true) or only at the first layer (false)
    bool encodings_every_layer = true;

    std::size_t head_dim() const { return model_dim / heads; }
    void validate() const;
};

struct AttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct EncoderLayerParams {
    AttentionParams attn;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Tensor norm1_gain, norm1_bias, norm2_gain, norm2_bias;
};

struct TransformerParams {
    std::vector<EncoderLayerParams> layers;
};

TransformerParams make_transformer_params(const EncoderConfig& cfg, Rng& rng);

// Test hook: freezes every attention distribution to uniform over unmasked
// keys, cutting the gradient/value path through the scores.
struct EncodeDebug {
    bool force_uniform_attention = false;
};

// Post-norm vanilla encoder stack over [T,d] tokens. The extra encodings are
// added to the attention inputs for Q and K only; V and the residual stream
// see the raw tokens. `mask` excludes padded positions from every softmax.
// Returns the full final-layer sequence [T,d].
Tensor encode_sequence(const Tensor& tokens, const Tensor& encodings,
                       const std::vector<std::uint8_t>& mask, const TransformerParams& params,
                       const EncoderConfig& cfg, const EncodeDebug* debug = nullptr);

// Graph-token row of the final layer, [1,d].
Tensor encode_graph(const GraphSequence& seq, const TransformerParams& params,
                    const EncoderConfig& cfg);

// Pads sequences to the batch maximum with masked filler rows and encodes
// each; row i equals encode_graph on sequence i alone. Returns [B,d].
Tensor encode_graph_batch(const std::vector<GraphSequence>& seqs, const TransformerParams& params,
                          const EncoderConfig& cfg);

} // namespace sgalign
