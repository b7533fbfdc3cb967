#pragma once

// Flat parameter storage with named matrix views, plus the Adam update rule.
// Keeping every weight in one contiguous array makes serialization, finite
// difference checks, and the optimizer loop trivial.

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vitalcast/common.hpp"

namespace vitalcast {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using MatMap = Eigen::Map<Eigen::MatrixXd>;
using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;

struct TensorSpec {
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    std::size_t offset = 0;

    std::size_t count() const { return static_cast<std::size_t>(rows * cols); }
};

class ParameterStore {
public:
    int add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        TensorSpec spec{name, rows, cols, data_.size()};
        data_.resize(data_.size() + spec.count(), 0.0);
        grad_.resize(data_.size(), 0.0);
        index_[name] = static_cast<int>(specs_.size());
        specs_.push_back(spec);
        return static_cast<int>(specs_.size()) - 1;
    }

    MatMap view(int id) {
        const TensorSpec& s = specs_[static_cast<std::size_t>(id)];
        return MatMap(data_.data() + s.offset, s.rows, s.cols);
    }
    ConstMatMap view(int id) const {
        const TensorSpec& s = specs_[static_cast<std::size_t>(id)];
        return ConstMatMap(data_.data() + s.offset, s.rows, s.cols);
    }
    MatMap grad(int id) {
        const TensorSpec& s = specs_[static_cast<std::size_t>(id)];
        return MatMap(grad_.data() + s.offset, s.rows, s.cols);
    }

    MatMap view(const std::string& name) { return view(index_.at(name)); }
    ConstMatMap view(const std::string& name) const { return view(index_.at(name)); }
    MatMap grad(const std::string& name) { return grad(index_.at(name)); }

    int id(const std::string& name) const { return index_.at(name); }
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }
    std::vector<double>& grads() { return grad_; }
    void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

    std::size_t size() const { return data_.size(); }
    const std::vector<TensorSpec>& specs() const { return specs_; }

private:
    std::vector<double> data_;
    std::vector<double> grad_;
    std::vector<TensorSpec> specs_;
    std::map<std::string, int> index_;
};

struct AdamOptimizer {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    std::vector<double> m, v;
    std::int64_t t = 0;

    void step(ParameterStore& store) {
        if (m.empty()) {
            m.assign(store.size(), 0.0);
            v.assign(store.size(), 0.0);
        }
        ++t;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        auto& w = store.data();
        auto& g = store.grads();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
};

}  // namespace vitalcast
