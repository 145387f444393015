#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "coma/tensor.hpp"

namespace coma::nn {

// Define-by-run reverse-mode tape over a fixed operator set. Values are
// computed eagerly when a node is created; backward() walks the nodes in
// reverse creation order. Node ids are indices into the tape and only valid
// for its lifetime.
class Tape {
public:
    int leaf(Tensor v, bool requires_grad = false);
    int constant(Tensor v) { return leaf(std::move(v), false); }

    const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].val; }
    const Tensor& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
    bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].rg; }

    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int scale(int a, double s);
    int add_many(const std::vector<int>& xs);

    int matmul(int a, int b);     // [m,k]x[k,n]
    int matmul_nt(int a, int b);  // [m,k]x[n,k]^T
    int linear(int x, int w, int b);  // x[r,i], w[o,i], b[o] or -1

    int conv1d(int x, int w, int b, int stride, int pad);  // x[cin,t], w[cout,cin,k]
    int upsample2(int x);                                  // [c,t] -> [c,2t]

    int gelu(int a);
    int layernorm(int x, int gamma, int beta, double eps = 1e-5);

    // mask has x's layout (rows*cols, 1 = attend); empty mask = unmasked.
    int softmax_masked(int x, std::shared_ptr<const std::vector<std::uint8_t>> mask);

    int gather_rows(int table, std::vector<int> idx);
    int scatter_rows(int rows, std::vector<int> dst, int total_rows);
    int slice_rows(int x, int r0, int r1);
    int slice_cols(int x, int c0, int c1);
    int concat_rows(const std::vector<int>& xs);
    int concat_cols(const std::vector<int>& xs);
    int transpose(int x);

    int mean_abs(int a, int target);  // scalar mean |a - target|
    int mean_sq(int a, int target);   // scalar mean (a - target)^2

    // Mean NLL over rows with use[r] != 0; zero rows selected gives loss 0.
    int cross_entropy_rows(int logits, std::vector<int> targets, std::vector<std::uint8_t> use);

    void backward(int root);

    int size() const { return static_cast<int>(nodes_.size()); }

private:
    struct Node {
        Tensor val;
        Tensor grad;
        bool rg = false;
        std::function<void(Tape&)> back;
    };

    int push(Tensor v, bool rg, std::function<void(Tape&)> back);
    Tensor& grad_mut(int id) { return nodes_[static_cast<size_t>(id)].grad; }

    std::vector<Node> nodes_;
};

// Named parameter tensors with Adam moments.
struct ParamStore {
    struct Entry {
        std::string name;
        Tensor value;
        Tensor m;
        Tensor v;
    };
    std::vector<Entry> entries;

    int add(const std::string& name, Tensor t);
    int index_of(const std::string& name) const;  // -1 when absent
    Tensor& operator[](int i) { return entries[static_cast<size_t>(i)].value; }
    const Tensor& operator[](int i) const { return entries[static_cast<size_t>(i)].value; }
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int warmup = 0;  // linear warm-up steps; 0 disables
};

// Binds every store entry to a tape leaf so one backward pass yields all
// parameter gradients.
struct BoundParams {
    Tape* tape = nullptr;
    ParamStore* store = nullptr;
    std::vector<int> node_ids;

    static BoundParams bind(Tape& tape, ParamStore& store, bool requires_grad = true);
    int node(const std::string& name) const;
};

// One Adam update from the gradients on the bound tape. step counts from 1.
void adam_step(const BoundParams& bound, const AdamConfig& cfg, int64_t step);

}  // namespace coma::nn
