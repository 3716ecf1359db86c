#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "acnn/patch.hpp"

namespace acnn {

enum class RunMode { Train, Eval };

// --- layer primitives -------------------------------------------------------

inline Eigen::MatrixXd fc_forward(const Eigen::MatrixXd& f_in, const Eigen::MatrixXd& weights,
                                  bool relu) {
    if (weights.cols() != f_in.cols())
        throw NumericError("fc_forward: weight shape does not match input dimension");
    Eigen::MatrixXd out = f_in * weights.transpose();
    if (relu) out = out.cwiseMax(0.0);
    return out;
}

/// Row-wise softmax with per-row max subtraction.
inline Eigen::MatrixXd softmax_forward(const Eigen::MatrixXd& f_in) {
    Eigen::MatrixXd out(f_in.rows(), f_in.cols());
    for (int r = 0; r < f_in.rows(); ++r) {
        Eigen::ArrayXd row = f_in.row(r).array();
        row -= row.maxCoeff();
        row = row.exp();
        out.row(r) = (row / row.sum()).matrix();
    }
    return out;
}

/// Train mode keeps each entry with probability 1 - pi_drop (mask returned via
/// out param when given); eval mode rescales deterministically by the keep
/// probability.
inline Eigen::MatrixXd dropout_forward(const Eigen::MatrixXd& f_in, double pi_drop, RunMode mode,
                                       Rng& rng, Eigen::MatrixXd* mask_out = nullptr) {
    if (pi_drop < 0 || pi_drop > 1) throw NumericError("dropout_forward: pi_drop must be in [0,1]");
    if (mode == RunMode::Eval) {
        if (mask_out) mask_out->setConstant(f_in.rows(), f_in.cols(), 1.0 - pi_drop);
        return (1.0 - pi_drop) * f_in;
    }
    Eigen::MatrixXd mask(f_in.rows(), f_in.cols());
    for (int r = 0; r < f_in.rows(); ++r)
        for (int c = 0; c < f_in.cols(); ++c) mask(r, c) = rng.bernoulli(1.0 - pi_drop) ? 1.0 : 0.0;
    if (mask_out) *mask_out = mask;
    return mask.cwiseProduct(f_in);
}

struct BatchNormParams {
    Eigen::RowVectorXd gamma;
    Eigen::RowVectorXd beta;
    Eigen::RowVectorXd running_mean;
    Eigen::RowVectorXd running_var;
    double momentum = 0.9;
    double eps = 1e-5;

    static BatchNormParams init(int dim) {
        BatchNormParams p;
        p.gamma = Eigen::RowVectorXd::Ones(dim);
        p.beta = Eigen::RowVectorXd::Zero(dim);
        p.running_mean = Eigen::RowVectorXd::Zero(dim);
        p.running_var = Eigen::RowVectorXd::Ones(dim);
        return p;
    }
};

/// Train mode normalizes over the batch and updates the running statistics by
/// exponential moving average; eval mode uses the running statistics.
inline Eigen::MatrixXd batchnorm_forward(const Eigen::MatrixXd& f_in, BatchNormParams& params,
                                         RunMode mode) {
    if (mode == RunMode::Train && f_in.rows() < 2)
        throw NumericError("batchnorm_forward: train mode requires batch >= 2");
    Eigen::RowVectorXd mu, var;
    if (mode == RunMode::Train) {
        mu = f_in.colwise().mean();
        var = (f_in.rowwise() - mu).array().square().colwise().mean();
        params.running_mean = params.momentum * params.running_mean + (1 - params.momentum) * mu;
        params.running_var = params.momentum * params.running_var + (1 - params.momentum) * var;
    } else {
        mu = params.running_mean;
        var = params.running_var;
    }
    Eigen::RowVectorXd inv_std = (var.array() + params.eps).rsqrt();
    Eigen::MatrixXd xhat = (f_in.rowwise() - mu) * inv_std.asDiagonal();
    return (xhat * params.gamma.asDiagonal()).rowwise() + params.beta;
}

inline constexpr double kProbFloor = 1e-12;

/// -sum log pred(x, target(x)), probabilities floored at 1e-12 inside the log.
inline double multinomial_loss(const Eigen::MatrixXd& pred, const std::vector<int>& targets) {
    if (static_cast<int>(targets.size()) != pred.rows())
        throw NumericError("multinomial_loss: target count does not match batch");
    double loss = 0;
    for (int r = 0; r < pred.rows(); ++r) {
        int y = targets[static_cast<std::size_t>(r)];
        if (y < 0 || y >= pred.cols())
            throw NumericError("multinomial_loss: target " + std::to_string(y) + " out of range");
        loss -= std::log(std::max(pred(r, y), kProbFloor));
    }
    return loss;
}

// --- architecture -----------------------------------------------------------

struct LayerSpec {
    enum class Kind { FC, IC, Softmax, Dropout, BatchNorm };
    Kind kind;
    int q = 0;          // output dim for FC/IC
    double drop = 0.0;  // dropout probability
};

/// Parses strings of the form "FC64+IC64+DO(0.5)+BN+Softmax".
inline std::vector<LayerSpec> parse_architecture(const std::string& arch) {
    std::vector<LayerSpec> specs;
    std::stringstream ss(arch);
    std::string tok;
    while (std::getline(ss, tok, '+')) {
        if (tok.empty()) throw ParseError("architecture: empty layer token in '" + arch + "'");
        if (tok == "Softmax") {
            specs.push_back({LayerSpec::Kind::Softmax});
        } else if (tok == "BN") {
            specs.push_back({LayerSpec::Kind::BatchNorm});
        } else if (tok.rfind("DO(", 0) == 0 && tok.back() == ')') {
            LayerSpec s{LayerSpec::Kind::Dropout};
            s.drop = std::stod(tok.substr(3, tok.size() - 4));
            specs.push_back(s);
        } else if (tok.rfind("FC", 0) == 0 || tok.rfind("IC", 0) == 0) {
            LayerSpec s{tok[0] == 'F' ? LayerSpec::Kind::FC : LayerSpec::Kind::IC};
            try {
                std::size_t used = 0;
                s.q = std::stoi(tok.substr(2), &used);
                if (used != tok.size() - 2 || s.q < 1) throw std::invalid_argument("dim");
            } catch (const std::exception&) {
                throw ParseError("architecture: bad layer token '" + tok + "'");
            }
            specs.push_back(s);
        } else {
            throw ParseError("architecture: unknown layer token '" + tok + "'");
        }
    }
    if (specs.empty()) throw ParseError("architecture: empty string");
    return specs;
}

inline std::string print_architecture(const std::vector<LayerSpec>& specs) {
    std::string out;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (i) out += "+";
        const auto& s = specs[i];
        switch (s.kind) {
            case LayerSpec::Kind::FC: out += "FC" + std::to_string(s.q); break;
            case LayerSpec::Kind::IC: out += "IC" + std::to_string(s.q); break;
            case LayerSpec::Kind::Softmax: out += "Softmax"; break;
            case LayerSpec::Kind::BatchNorm: out += "BN"; break;
            case LayerSpec::Kind::Dropout: {
                std::ostringstream os;
                os << "DO(" << s.drop << ")";
                out += os.str();
                break;
            }
        }
    }
    return out;
}

// --- layers with state and exact backward passes ----------------------------

class Layer {
public:
    virtual ~Layer() = default;
    virtual Eigen::MatrixXd forward(const Eigen::MatrixXd& x, RunMode mode, Rng& rng) = 0;
    virtual Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) = 0;
    virtual std::vector<Eigen::MatrixXd*> params() { return {}; }
    virtual std::vector<Eigen::MatrixXd*> grads() { return {}; }
    virtual void zero_grads() {
        for (auto* g : grads()) g->setZero();
    }
    [[nodiscard]] virtual bool needs_full_field() const { return false; }
    [[nodiscard]] virtual int out_dim(int in_dim) const = 0;
};

class FcLayer : public Layer {
public:
    FcLayer(int q, int p, bool relu) : relu_(relu) {
        w_ = Eigen::MatrixXd::Zero(q, p);
        dw_ = Eigen::MatrixXd::Zero(q, p);
    }
    void init(Rng& rng) {
        double bound = std::sqrt(6.0 / (w_.rows() + w_.cols()));
        for (int r = 0; r < w_.rows(); ++r)
            for (int c = 0; c < w_.cols(); ++c) w_(r, c) = rng.uniform(-bound, bound);
    }
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, RunMode, Rng&) override {
        x_ = x;
        Eigen::MatrixXd y = fc_forward(x, w_, relu_);
        if (relu_) relu_mask_ = (y.array() > 0).cast<double>();
        return y;
    }
    Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) override {
        Eigen::MatrixXd d = relu_ ? dy.cwiseProduct(relu_mask_) : dy;
        dw_ += d.transpose() * x_;
        return d * w_;
    }
    std::vector<Eigen::MatrixXd*> params() override { return {&w_}; }
    std::vector<Eigen::MatrixXd*> grads() override { return {&dw_}; }
    [[nodiscard]] int out_dim(int) const override { return static_cast<int>(w_.rows()); }
    [[nodiscard]] bool relu() const { return relu_; }
    Eigen::MatrixXd& weights() { return w_; }

private:
    Eigen::MatrixXd w_, dw_, x_, relu_mask_;
    bool relu_;
};

class IcLayer : public Layer {
public:
    IcLayer(int q, int p, const PatchOperatorSet* ops) : ops_(ops) {
        bank_ = FilterBank::zeros(q, p, ops->L, ops->T);
        dbank_ = Eigen::MatrixXd::Zero(bank_.a.rows(), bank_.a.cols());
    }
    void init(Rng& rng) {
        double bound = std::sqrt(6.0 / (bank_.a.rows() + bank_.a.cols()));
        for (int r = 0; r < bank_.a.rows(); ++r)
            for (int c = 0; c < bank_.a.cols(); ++c) bank_.a(r, c) = rng.uniform(-bound, bound);
    }
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, RunMode, Rng&) override {
        patches_ = apply_patch_operator(*ops_, x);
        return intrinsic_convolution(patches_, bank_);
    }
    Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) override {
        dbank_ += dy.transpose() * patches_.data;
        PatchTensor dpatch;
        dpatch.L = patches_.L;
        dpatch.T = patches_.T;
        dpatch.P = patches_.P;
        dpatch.data = dy * bank_.a;
        return apply_patch_operator_adjoint(*ops_, dpatch);
    }
    std::vector<Eigen::MatrixXd*> params() override { return {&bank_.a}; }
    std::vector<Eigen::MatrixXd*> grads() override { return {&dbank_}; }
    [[nodiscard]] bool needs_full_field() const override { return true; }
    [[nodiscard]] int out_dim(int) const override { return static_cast<int>(bank_.a.rows()); }
    FilterBank& bank() { return bank_; }
    void set_ops(const PatchOperatorSet* ops) {
        if (ops->L != bank_.L || ops->T != bank_.T)
            throw NumericError("IC layer: patch-operator grid does not match filter bank");
        ops_ = ops;
    }

private:
    const PatchOperatorSet* ops_;
    FilterBank bank_;
    Eigen::MatrixXd dbank_;
    PatchTensor patches_;
};

class SoftmaxLayer : public Layer {
public:
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, RunMode, Rng&) override {
        y_ = softmax_forward(x);
        return y_;
    }
    Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) override {
        Eigen::MatrixXd dx = dy.cwiseProduct(y_);
        Eigen::VectorXd rowdot = dx.rowwise().sum();
        dx -= (y_.array().colwise() * rowdot.array()).matrix();
        return dx;
    }
    [[nodiscard]] int out_dim(int in_dim) const override { return in_dim; }

private:
    Eigen::MatrixXd y_;
};

class DropoutLayer : public Layer {
public:
    explicit DropoutLayer(double p) : p_(p) {}
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, RunMode mode, Rng& rng) override {
        mode_ = mode;
        return dropout_forward(x, p_, mode, rng, &mask_);
    }
    Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) override {
        return mode_ == RunMode::Train ? dy.cwiseProduct(mask_).eval()
                                       : ((1.0 - p_) * dy).eval();
    }
    [[nodiscard]] int out_dim(int in_dim) const override { return in_dim; }

private:
    double p_;
    RunMode mode_ = RunMode::Train;
    Eigen::MatrixXd mask_;
};

class BatchNormLayer : public Layer {
public:
    explicit BatchNormLayer(int dim) {
        gamma_ = Eigen::MatrixXd::Ones(1, dim);
        beta_ = Eigen::MatrixXd::Zero(1, dim);
        dgamma_ = Eigen::MatrixXd::Zero(1, dim);
        dbeta_ = Eigen::MatrixXd::Zero(1, dim);
        running_mean_ = Eigen::RowVectorXd::Zero(dim);
        running_var_ = Eigen::RowVectorXd::Ones(dim);
    }
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, RunMode mode, Rng&) override {
        mode_ = mode;
        Eigen::RowVectorXd mu;
        if (mode == RunMode::Train) {
            if (x.rows() < 2) throw NumericError("batchnorm: train mode requires batch >= 2");
            mu = x.colwise().mean();
            Eigen::RowVectorXd var = (x.rowwise() - mu).array().square().colwise().mean();
            running_mean_ = momentum_ * running_mean_ + (1 - momentum_) * mu;
            running_var_ = momentum_ * running_var_ + (1 - momentum_) * var;
            inv_std_ = (var.array() + eps_).rsqrt();
        } else {
            mu = running_mean_;
            inv_std_ = (running_var_.array() + eps_).rsqrt();
        }
        xhat_ = (x.rowwise() - mu) * inv_std_.asDiagonal();
        return (xhat_ * gamma_.row(0).asDiagonal()).rowwise() + beta_.row(0);
    }
    Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) override {
        dgamma_ += dy.cwiseProduct(xhat_).colwise().sum();
        dbeta_ += dy.colwise().sum();
        Eigen::MatrixXd dxhat = dy * gamma_.row(0).asDiagonal();
        if (mode_ == RunMode::Eval) return dxhat * inv_std_.asDiagonal();
        const double n = static_cast<double>(dy.rows());
        Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
        Eigen::RowVectorXd sum_dxhat_xhat = dxhat.cwiseProduct(xhat_).colwise().sum();
        Eigen::MatrixXd dx =
            dxhat - (Eigen::MatrixXd::Ones(dy.rows(), 1) * sum_dxhat) / n -
            xhat_.cwiseProduct(Eigen::MatrixXd::Ones(dy.rows(), 1) * sum_dxhat_xhat) / n;
        return dx * inv_std_.asDiagonal();
    }
    std::vector<Eigen::MatrixXd*> params() override { return {&gamma_, &beta_}; }
    std::vector<Eigen::MatrixXd*> grads() override { return {&dgamma_, &dbeta_}; }
    [[nodiscard]] int out_dim(int in_dim) const override { return in_dim; }
    Eigen::RowVectorXd& running_mean() { return running_mean_; }
    Eigen::RowVectorXd& running_var() { return running_var_; }

private:
    Eigen::MatrixXd gamma_, beta_, dgamma_, dbeta_, xhat_;
    Eigen::RowVectorXd running_mean_, running_var_, inv_std_;
    double momentum_ = 0.9;
    double eps_ = 1e-5;
    RunMode mode_ = RunMode::Train;
};

// --- ADAM -------------------------------------------------------------------

struct AdamState {
    std::vector<Eigen::MatrixXd> m;
    std::vector<Eigen::MatrixXd> v;
    long step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState init(const std::vector<Eigen::MatrixXd*>& params, double lr = 1e-3) {
        AdamState s;
        s.lr = lr;
        for (auto* p : params) {
            s.m.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
            s.v.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
        }
        return s;
    }
};

/// Standard bias-corrected ADAM update, in place.
inline void adam_step(const std::vector<Eigen::MatrixXd*>& params,
                      const std::vector<Eigen::MatrixXd*>& grads, AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw NumericError("adam_step: parameter/gradient/state count mismatch");
    state.step += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Eigen::MatrixXd& g = *grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g.cwiseProduct(g);
        Eigen::MatrixXd mhat = state.m[i] / bc1;
        Eigen::MatrixXd vhat = state.v[i] / bc2;
        params[i]->array() -= state.lr * mhat.array() / (vhat.array().sqrt() + state.eps);
    }
}

// --- network ----------------------------------------------------------------

/// Layer stack built from an architecture string. IC layers require the full
/// vertex field; the forward pass runs full-field through the last IC layer
/// and restricts to the requested batch rows for the pointwise tail. A final
/// linear FC to the reference vertex count is appended implicitly when the
/// declared dimensions do not already reach it.
class Network {
public:
    Network(const std::string& arch, int input_dim, int output_dim, const PatchOperatorSet* ops,
            std::uint64_t seed)
        : arch_(arch), input_dim_(input_dim), output_dim_(output_dim) {
        auto specs = parse_architecture(arch);
        if (specs.back().kind != LayerSpec::Kind::Softmax)
            throw ParseError("architecture must end with Softmax");
        // The FC feeding the softmax stays linear (logits); other FCs use ReLU.
        int last_fc = -1;
        for (std::size_t i = 0; i < specs.size(); ++i)
            if (specs[i].kind == LayerSpec::Kind::FC) last_fc = static_cast<int>(i);
        int dim = input_dim;
        Rng rng(seed);
        for (std::size_t i = 0; i + 1 < specs.size(); ++i) {
            const auto& s = specs[i];
            switch (s.kind) {
                case LayerSpec::Kind::FC: {
                    bool relu = static_cast<int>(i) != last_fc || s.q != output_dim;
                    auto fc = std::make_unique<FcLayer>(s.q, dim, relu);
                    fc->init(rng);
                    layers_.push_back(std::move(fc));
                    dim = s.q;
                    break;
                }
                case LayerSpec::Kind::IC: {
                    if (!ops) throw NumericError("architecture has IC layers but no patch operators");
                    auto ic = std::make_unique<IcLayer>(s.q, dim, ops);
                    ic->init(rng);
                    layers_.push_back(std::move(ic));
                    dim = s.q;
                    break;
                }
                case LayerSpec::Kind::Dropout:
                    layers_.push_back(std::make_unique<DropoutLayer>(s.drop));
                    break;
                case LayerSpec::Kind::BatchNorm:
                    layers_.push_back(std::make_unique<BatchNormLayer>(dim));
                    break;
                case LayerSpec::Kind::Softmax:
                    throw ParseError("Softmax must be the final layer");
            }
        }
        if (dim != output_dim) {
            auto fc = std::make_unique<FcLayer>(output_dim, dim, /*relu=*/false);
            fc->init(rng);
            layers_.push_back(std::move(fc));
            implicit_output_fc_ = true;
        }
        layers_.push_back(std::make_unique<SoftmaxLayer>());
        full_field_through_ = -1;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            if (layers_[i]->needs_full_field()) full_field_through_ = static_cast<int>(i);
    }

    /// Soft correspondence for the given rows (all rows when batch is empty).
    Eigen::MatrixXd forward(const Eigen::MatrixXd& features, const std::vector<int>& batch_rows,
                            RunMode mode, Rng& rng) {
        if (features.cols() != input_dim_)
            throw NumericError("network forward: feature dimension mismatch");
        batch_rows_ = batch_rows;
        full_rows_ = static_cast<int>(features.rows());
        Eigen::MatrixXd x = features;
        std::size_t i = 0;
        for (; static_cast<int>(i) <= full_field_through_; ++i)
            x = layers_[i]->forward(x, mode, rng);
        if (!batch_rows.empty()) {
            Eigen::MatrixXd sel(static_cast<int>(batch_rows.size()), x.cols());
            for (std::size_t r = 0; r < batch_rows.size(); ++r)
                sel.row(static_cast<int>(r)) = x.row(batch_rows[r]);
            x = sel;
        }
        for (; i < layers_.size(); ++i) x = layers_[i]->forward(x, mode, rng);
        return x;
    }

    Eigen::MatrixXd forward_eval(const Eigen::MatrixXd& features) {
        Rng rng(0);
        return forward(features, {}, RunMode::Eval, rng);
    }

    /// Reverse pass for the gradients of the most recent forward call.
    void backward(const Eigen::MatrixXd& dloss) {
        Eigen::MatrixXd d = dloss;
        int i = static_cast<int>(layers_.size()) - 1;
        for (; i > full_field_through_; --i) d = layers_[static_cast<std::size_t>(i)]->backward(d);
        if (!batch_rows_.empty() && full_field_through_ >= 0) {
            Eigen::MatrixXd scattered = Eigen::MatrixXd::Zero(full_rows_, d.cols());
            for (std::size_t r = 0; r < batch_rows_.size(); ++r)
                scattered.row(batch_rows_[r]) += d.row(static_cast<int>(r));
            d = scattered;
        }
        for (; i >= 0; --i) d = layers_[static_cast<std::size_t>(i)]->backward(d);
    }

    void zero_grads() {
        for (auto& l : layers_) l->zero_grads();
    }
    std::vector<Eigen::MatrixXd*> params() {
        std::vector<Eigen::MatrixXd*> out;
        for (auto& l : layers_)
            for (auto* p : l->params()) out.push_back(p);
        return out;
    }
    std::vector<Eigen::MatrixXd*> grads() {
        std::vector<Eigen::MatrixXd*> out;
        for (auto& l : layers_)
            for (auto* g : l->grads()) out.push_back(g);
        return out;
    }

    /// Points every IC layer at another shape's patch operators; required when
    /// training or evaluating across several query shapes.
    void rebind_patch_ops(const PatchOperatorSet* ops) {
        for (auto& l : layers_)
            if (auto* ic = dynamic_cast<IcLayer*>(l.get())) ic->set_ops(ops);
    }

    [[nodiscard]] const std::string& architecture() const { return arch_; }
    [[nodiscard]] int input_dim() const { return input_dim_; }
    [[nodiscard]] int output_dim() const { return output_dim_; }
    std::vector<std::unique_ptr<Layer>>& layers() { return layers_; }

    // Feature standardization travels with the parameters.
    Eigen::RowVectorXd feature_mean;
    Eigen::RowVectorXd feature_std;

private:
    std::string arch_;
    int input_dim_, output_dim_;
    bool implicit_output_fc_ = false;
    int full_field_through_ = -1;
    int full_rows_ = 0;
    std::vector<int> batch_rows_;
    std::vector<std::unique_ptr<Layer>> layers_;
};

/// d(loss)/d(pred) of the floored multinomial loss; pairs with forward().
inline Eigen::MatrixXd multinomial_loss_grad(const Eigen::MatrixXd& pred,
                                             const std::vector<int>& targets) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(pred.rows(), pred.cols());
    for (int r = 0; r < pred.rows(); ++r) {
        double p = pred(r, targets[static_cast<std::size_t>(r)]);
        if (p > kProbFloor) g(r, targets[static_cast<std::size_t>(r)]) = -1.0 / p;
    }
    return g;
}

// --- checkpoint IO ----------------------------------------------------------

inline constexpr std::uint64_t kCheckpointMagic = 0x41434b501ULL;

inline void save_checkpoint(Network& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IOError("cannot write checkpoint: " + path);
    write_u64(os, kCheckpointMagic);
    write_string(os, net.architecture());
    write_u64(os, static_cast<std::uint64_t>(net.input_dim()));
    write_u64(os, static_cast<std::uint64_t>(net.output_dim()));
    auto params = net.params();
    write_u64(os, params.size());
    for (auto* p : params) {
        write_u64(os, static_cast<std::uint64_t>(p->rows()));
        write_u64(os, static_cast<std::uint64_t>(p->cols()));
        for (int c = 0; c < p->cols(); ++c)
            for (int r = 0; r < p->rows(); ++r) write_f64(os, (*p)(r, c));
    }
    // Batch-norm running statistics, in layer order.
    for (auto& l : net.layers()) {
        if (auto* bn = dynamic_cast<BatchNormLayer*>(l.get())) {
            for (int i = 0; i < bn->running_mean().size(); ++i)
                write_f64(os, bn->running_mean()(i));
            for (int i = 0; i < bn->running_var().size(); ++i)
                write_f64(os, bn->running_var()(i));
        }
    }
    write_u64(os, net.feature_mean.size() > 0 ? 1 : 0);
    for (int i = 0; i < net.feature_mean.size(); ++i) write_f64(os, net.feature_mean(i));
    for (int i = 0; i < net.feature_std.size(); ++i) write_f64(os, net.feature_std(i));
    if (!os) throw IOError("write failure: " + path);
}

/// Rebuilds a network from a checkpoint; patch operators must match the
/// architecture's IC layers.
inline Network load_checkpoint(const std::string& path, const PatchOperatorSet* ops) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IOError("cannot open checkpoint: " + path);
    if (read_u64(is) != kCheckpointMagic) throw IOError("bad checkpoint header: " + path);
    std::string arch = read_string(is);
    auto input_dim = static_cast<int>(read_u64(is));
    auto output_dim = static_cast<int>(read_u64(is));
    Network net(arch, input_dim, output_dim, ops, /*seed=*/0);
    auto params = net.params();
    auto count = read_u64(is);
    if (count != params.size()) throw IOError("checkpoint parameter count mismatch: " + path);
    for (auto* p : params) {
        auto rows = static_cast<int>(read_u64(is));
        auto cols = static_cast<int>(read_u64(is));
        if (rows != p->rows() || cols != p->cols())
            throw IOError("checkpoint tensor shape mismatch: " + path);
        for (int c = 0; c < cols; ++c)
            for (int r = 0; r < rows; ++r) (*p)(r, c) = read_f64(is);
    }
    for (auto& l : net.layers()) {
        if (auto* bn = dynamic_cast<BatchNormLayer*>(l.get())) {
            for (int i = 0; i < bn->running_mean().size(); ++i)
                bn->running_mean()(i) = read_f64(is);
            for (int i = 0; i < bn->running_var().size(); ++i)
                bn->running_var()(i) = read_f64(is);
        }
    }
    if (read_u64(is) == 1) {
        net.feature_mean.resize(input_dim);
        net.feature_std.resize(input_dim);
        for (int i = 0; i < input_dim; ++i) net.feature_mean(i) = read_f64(is);
        for (int i = 0; i < input_dim; ++i) net.feature_std(i) = read_f64(is);
    }
    return net;
}

// --- training ---------------------------------------------------------------

/// One labelled query shape: standardized features plus per-vertex reference
/// labels (-1 marks vertices outside the training set).
struct TrainingShape {
    const PatchOperatorSet* ops = nullptr;
    Eigen::MatrixXd features;   // n x P, standardized
    std::vector<int> labels;    // n entries in [0, m) or -1
    std::vector<int> train_vertices;  // indices with labels
};

struct TrainOptions {
    long steps = 500;
    int batch_size = 256;
    double lr = 1e-3;
    std::uint64_t seed = 1;
};

struct TrainResult {
    std::vector<double> loss_history;
};

/// Mini-batch training: each step draws a uniform vertex batch from one
/// training shape, runs forward/backward, and applies one ADAM update.
/// Deterministic given the seed. NaN loss aborts with the step index.
inline TrainResult train(Network& net, const std::vector<TrainingShape>& shapes,
                         const TrainOptions& opts) {
    if (shapes.empty()) throw NumericError("train: no training shapes");
    Rng rng(opts.seed);
    auto params = net.params();
    auto grads = net.grads();
    AdamState adam = AdamState::init(params, opts.lr);
    TrainResult result;
    result.loss_history.reserve(static_cast<std::size_t>(opts.steps));
    for (long step = 0; step < opts.steps; ++step) {
        const TrainingShape& shape =
            shapes[shapes.size() == 1 ? 0 : rng.next_index(shapes.size())];
        if (shapes.size() > 1) net.rebind_patch_ops(shape.ops);
        int batch = std::min<int>(opts.batch_size,
                                  static_cast<int>(shape.train_vertices.size()));
        std::vector<int> rows(static_cast<std::size_t>(batch));
        std::vector<int> targets(static_cast<std::size_t>(batch));
        for (int b = 0; b < batch; ++b) {
            int v = shape.train_vertices[rng.next_index(shape.train_vertices.size())];
            rows[static_cast<std::size_t>(b)] = v;
            targets[static_cast<std::size_t>(b)] = shape.labels[static_cast<std::size_t>(v)];
        }
        Eigen::MatrixXd pred = net.forward(shape.features, rows, RunMode::Train, rng);
        double loss = multinomial_loss(pred, targets) / batch;
        if (!std::isfinite(loss))
            throw NumericError("train: non-finite loss at step " + std::to_string(step));
        result.loss_history.push_back(loss);
        net.zero_grads();
        net.backward(multinomial_loss_grad(pred, targets) / batch);
        adam_step(params, grads, adam);
    }
    return result;
}

}  // namespace acnn
