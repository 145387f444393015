#include "coma/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "coma/checkpoint.hpp"

namespace coma::metrics {

double mas(const std::vector<double>& text_emb, const std::vector<double>& video_emb) {
    if (text_emb.size() != video_emb.size() || text_emb.empty()) throw Error("mas: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < text_emb.size(); ++i) {
        dot += text_emb[i] * video_emb[i];
        na += text_emb[i] * text_emb[i];
        nb += video_emb[i] * video_emb[i];
    }
    if (na == 0.0 || nb == 0.0) throw Error("mas: zero-norm embedding");
    return 100.0 * dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

constexpr double kEigFloor = -1e-8;

Eigen::MatrixXd covariance(const EmbeddingSet& s, Eigen::VectorXd& mean) {
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(
        s.data.data(), s.rows, s.dim);
    mean = X.colwise().mean();
    Eigen::MatrixXd centered = X.rowwise() - mean.transpose();
    return centered.transpose() * centered / static_cast<double>(s.rows - 1);
}

// Symmetric PSD square root by eigendecomposition; negative eigenvalues below
// the clamp tolerance indicate a rank problem.
Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    Eigen::VectorXd ev = es.eigenvalues();
    for (int i = 0; i < ev.size(); ++i) {
        if (ev[i] < kEigFloor) throw Error("fid: matrix square root has a negative eigenvalue");
        ev[i] = std::sqrt(std::max(ev[i], 0.0));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double fid(const EmbeddingSet& a, const EmbeddingSet& b) {
    if (a.dim != b.dim) throw Error("fid: dimension mismatch");
    if (a.rows <= a.dim || b.rows <= b.dim) throw Error("fid: need more rows than dimensions");
    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd ca = covariance(a, mu_a);
    Eigen::MatrixXd cb = covariance(b, mu_b);
    double mean_term = (mu_a - mu_b).squaredNorm();
    Eigen::MatrixXd sa_half = sym_sqrt(ca);
    Eigen::MatrixXd inner = sa_half * cb * sa_half;
    Eigen::MatrixXd cross = sym_sqrt(inner);
    double val = mean_term + ca.trace() + cb.trace() - 2.0 * cross.trace();
    return std::max(val, 0.0);
}

double r_precision(const EmbeddingSet& motion_embs, const EmbeddingSet& text_embs, int pool, int k,
                   uint64_t seed) {
    if (motion_embs.rows != text_embs.rows || motion_embs.dim != text_embs.dim)
        throw Error("r_precision: aligned sets required");
    int m = motion_embs.rows;
    if (pool > m) throw Error("r_precision: pool larger than the set");
    if (k < 1) throw Error("r_precision: k must be >= 1");
    Rng rng(seed);
    auto dist2 = [&](const double* x, const double* y) {
        double s = 0.0;
        for (int j = 0; j < motion_embs.dim; ++j) {
            double d = x[j] - y[j];
            s += d * d;
        }
        return s;
    };
    int hits = 0;
    for (int i = 0; i < m; ++i) {
        // pool-1 distinct distractor texts, excluding the true pair.
        std::vector<int> cand;
        std::vector<std::uint8_t> used(static_cast<size_t>(m), 0);
        used[static_cast<size_t>(i)] = 1;
        while (static_cast<int>(cand.size()) < pool - 1) {
            int j = rng.uniform_int(m);
            if (used[static_cast<size_t>(j)]) continue;
            used[static_cast<size_t>(j)] = 1;
            cand.push_back(j);
        }
        double true_d = dist2(motion_embs.row(i), text_embs.row(i));
        int rank = 1;
        for (int j : cand)
            if (dist2(motion_embs.row(i), text_embs.row(j)) < true_d) ++rank;
        if (rank <= k) ++hits;
    }
    return static_cast<double>(hits) / m;
}

double mm_dist(const EmbeddingSet& motion_embs, const EmbeddingSet& text_embs) {
    if (motion_embs.rows != text_embs.rows || motion_embs.dim != text_embs.dim)
        throw Error("mm_dist: aligned sets required");
    if (motion_embs.rows == 0) throw Error("mm_dist: empty input");
    double total = 0.0;
    for (int i = 0; i < motion_embs.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < motion_embs.dim; ++j) {
            double d = motion_embs.row(i)[j] - text_embs.row(i)[j];
            s += d * d;
        }
        total += std::sqrt(s);
    }
    return total / motion_embs.rows;
}

double multimodality(const std::vector<EmbeddingSet>& groups) {
    if (groups.empty()) throw Error("multimodality: empty input");
    double total = 0.0;
    for (const auto& g : groups) {
        if (g.rows < 2) throw Error("multimodality: groups need at least 2 rows");
        double s = 0.0;
        int pairs = 0;
        for (int i = 0; i < g.rows; ++i)
            for (int j = i + 1; j < g.rows; ++j) {
                double d2 = 0.0;
                for (int c = 0; c < g.dim; ++c) {
                    double d = g.row(i)[c] - g.row(j)[c];
                    d2 += d * d;
                }
                s += std::sqrt(d2);
                ++pairs;
            }
        total += s / pairs;
    }
    return total / static_cast<double>(groups.size());
}

void write_embeddings(const std::string& path, const EmbeddingSet& set) {
    NamedTensors nt;
    nt.add("embeddings", {set.rows, set.dim}, set.data);
    nt.add("kind", {1}, {static_cast<double>(static_cast<int>(set.kind))});
    write_cmk1(path, nt);
}

EmbeddingSet read_embeddings(const std::string& path) {
    NamedTensors nt = read_cmk1(path);
    const auto& item = nt.find("embeddings");
    if (item.shape.size() != 2) throw FormatError("embedding file: expected M x E tensor");
    EmbeddingSet s;
    s.rows = item.shape[0];
    s.dim = item.shape[1];
    s.data = item.data;
    if (nt.contains("kind")) s.kind = static_cast<EmbeddingSet::Kind>(static_cast<int>(nt.find("kind").data[0]));
    return s;
}

}  // namespace coma::metrics
