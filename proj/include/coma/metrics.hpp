#pragma once

#include <string>
#include <vector>

#include "coma/common.hpp"

namespace coma::metrics {

struct EmbeddingSet {
    enum class Kind { Text, Motion, Video };
    int rows = 0;
    int dim = 0;
    std::vector<double> data;  // row-major
    Kind kind = Kind::Motion;

    const double* row(int i) const { return data.data() + static_cast<size_t>(i) * dim; }
};

// 100 * cosine similarity; throws on zero-norm inputs.
double mas(const std::vector<double>& text_emb, const std::vector<double>& video_emb);

// Frechet distance between Gaussian fits: |mu_a-mu_b|^2 +
// tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2). Eigenvalues below -1e-8 are an
// error; small negatives are clamped to zero. Requires rows > dim per set.
double fid(const EmbeddingSet& a, const EmbeddingSet& b);

// For each motion, rank its paired text among pool-1 seeded distractors by
// Euclidean distance; returns the fraction with rank <= k.
double r_precision(const EmbeddingSet& motion_embs, const EmbeddingSet& text_embs, int pool, int k,
                   uint64_t seed);

// Mean Euclidean distance over aligned pairs.
double mm_dist(const EmbeddingSet& motion_embs, const EmbeddingSet& text_embs);

// Mean pairwise distance within each repeat group, averaged over groups.
double multimodality(const std::vector<EmbeddingSet>& groups);

void write_embeddings(const std::string& path, const EmbeddingSet& set);
EmbeddingSet read_embeddings(const std::string& path);

}  // namespace coma::metrics
