#pragma once

#include <optional>
#include <vector>

#include "tape.hpp"

namespace umurl {

struct LossConfig {
    double gamma = 1.0;    // variance threshold
    double epsilon = 1e-4; // variance stability scalar
    double mu = 5.0;       // variance-term weight
    double lambda = 5.0;   // consistency weight
    // Hinge argument: default sqrt(Var + eps); the alternative keeps eps
    // outside the root as the formula is usually printed. The default gives
    // a finite gradient at Var = 0.
    bool eps_outside_sqrt = false;
    // Weight of the covariance term inside the VC loss; 1 is the published
    // objective, 0 (together with mu = 0) disables VC regularization.
    double cov_weight = 1.0;

    void validate() const {
        require(gamma > 0.0, "LossConfig: gamma must be positive");
        require(epsilon > 0.0, "LossConfig: epsilon must be positive");
        require(mu >= 0.0, "LossConfig: mu must be non-negative");
        require(lambda >= 0.0, "LossConfig: lambda must be non-negative");
        require(cov_weight >= 0.0, "LossConfig: cov_weight must be non-negative");
    }
};

namespace detail {

template <typename T>
void check_batch(const Var<T>& z, const char* op) {
    check(z.shape().size() == 2, "loss operand must be an N x D batch");
    if (z.shape()[0] < 2) {
        throw ContractError(std::string(op) + ": batch of at least 2 rows required");
    }
}

}  // namespace detail

// (1/N) * sum_i ||a_i - b_i||^2
template <typename T>
Var<T> mse_consistency(const Var<T>& a, const Var<T>& b) {
    detail::check(a.shape().size() == 2 && a.shape() == b.shape(),
                  "mse_consistency: equal N x D shapes required");
    const double n = static_cast<double>(a.shape()[0]);
    Var<T> d = sub(a, b);
    return scale(sum_all(square(d)), 1.0 / n);
}

// Unbiased per-column variance of an N x D batch as a rank-1 value.
template <typename T>
Var<T> column_variance(const Var<T>& z) {
    detail::check_batch(z, "column_variance");
    const double n = static_cast<double>(z.shape()[0]);
    Var<T> centered = sub_rowvec(z, mean_rows(z));
    Var<T> biased = mean_rows(square(centered));
    return scale(biased, n / (n - 1.0));
}

// (1/D) * sum_j max(0, gamma - sqrt(Var_j + eps))
template <typename T>
Var<T> variance_term(const Var<T>& z, const LossConfig& cfg) {
    detail::check_batch(z, "variance_term");
    Var<T> var = column_variance(z);
    Var<T> std_dev;
    double threshold = cfg.gamma;
    if (cfg.eps_outside_sqrt) {
        std_dev = sqrt(var);
        threshold = cfg.gamma + cfg.epsilon;
    } else {
        std_dev = sqrt(add_const(var, cfg.epsilon));
    }
    Var<T> hinge = relu(add_const(scale(std_dev, -1.0), threshold));
    return mean_all(hinge);
}

// (1/D) * sum_{i != j} Cov(Z)_{ij}^2 with the unbiased (N-1) covariance.
template <typename T>
Var<T> covariance_term(const Var<T>& z) {
    detail::check_batch(z, "covariance_term");
    const std::size_t d = z.shape()[1];
    const double n = static_cast<double>(z.shape()[0]);
    Var<T> centered = sub_rowvec(z, mean_rows(z));
    Var<T> cov = scale(matmul(centered, centered, true, false), 1.0 / (n - 1.0));
    TensorData<T> off_diagonal = TensorData<T>::full({d, d}, T{1});
    for (std::size_t i = 0; i < d; ++i) {
        off_diagonal.data[i * d + i] = T{0};
    }
    return scale(sum_all(square(mul_mask(cov, off_diagonal))), 1.0 / static_cast<double>(d));
}

// mu * V(Z) + C(Z)
template <typename T>
Var<T> vc_loss(const Var<T>& z, const LossConfig& cfg) {
    Var<T> v = scale(variance_term(z, cfg), cfg.mu);
    Var<T> c = scale(covariance_term(z), cfg.cov_weight);
    return add(v, c);
}

// lambda * MSE(Z, Z') + VC(Z) + VC(Z')
template <typename T>
Var<T> baseline_loss(const Var<T>& zu, const Var<T>& zu_prime, const LossConfig& cfg) {
    Var<T> consistency = scale(mse_consistency(zu, zu_prime), cfg.lambda);
    return add(consistency, add(vc_loss(zu, cfg), vc_loss(zu_prime, cfg)));
}

// sum_m MSE(Z^{u,m}, Z^m)
template <typename T>
Var<T> intra_loss(const std::vector<Var<T>>& decomposed, const std::vector<Var<T>>& unimodal) {
    require(!decomposed.empty() && decomposed.size() == unimodal.size(),
            "intra_loss: modality sets must match");
    Var<T> total = mse_consistency(decomposed[0], unimodal[0]);
    for (std::size_t m = 1; m < decomposed.size(); ++m) {
        total = add(total, mse_consistency(decomposed[m], unimodal[m]));
    }
    return total;
}

// sum over ordered pairs i != j of MSE(Z^i, Z^j); twice the unordered sum.
template <typename T>
Var<T> inter_loss(const std::vector<Var<T>>& unimodal) {
    require(unimodal.size() >= 2, "inter_loss: at least two modalities required");
    std::optional<Var<T>> total;
    for (std::size_t i = 0; i < unimodal.size(); ++i) {
        for (std::size_t j = i + 1; j < unimodal.size(); ++j) {
            Var<T> pair = scale(mse_consistency(unimodal[i], unimodal[j]), 2.0);
            total = total ? add(*total, pair) : pair;
        }
    }
    return *total;
}

// sum_m VC(Z^m) + VC(Z^{u,m})
template <typename T>
Var<T> reg_loss(const std::vector<Var<T>>& unimodal, const std::vector<Var<T>>& decomposed,
                const LossConfig& cfg) {
    require(!unimodal.empty() && unimodal.size() == decomposed.size(),
            "reg_loss: modality sets must match");
    std::optional<Var<T>> total;
    for (std::size_t m = 0; m < unimodal.size(); ++m) {
        Var<T> term = add(vc_loss(unimodal[m], cfg), vc_loss(decomposed[m], cfg));
        total = total ? add(*total, term) : term;
    }
    return *total;
}

// lambda * (intra + inter) + reg; inter is absent when k = 1.
template <typename T>
Var<T> umurl_loss(const Var<T>& intra, const std::optional<Var<T>>& inter, const Var<T>& reg,
                  const LossConfig& cfg) {
    Var<T> consistency = intra;
    if (inter) {
        consistency = add(consistency, *inter);
    }
    return add(scale(consistency, cfg.lambda), reg);
}

}  // namespace umurl
