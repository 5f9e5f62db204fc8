#pragma once
// Adam optimizer with name-keyed state, shared across the tensors of one
// update group (generator+encoder, or critic). State serializes into the
// checkpoint tensor table so training resumes bit-exactly.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "tensor.hpp"

namespace noisegen {

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const {
        if (!(lr > 0.0)) throw std::invalid_argument("AdamConfig: lr must be positive");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
            throw std::invalid_argument("AdamConfig: betas must lie in [0, 1)");
        if (!(eps > 0.0)) throw std::invalid_argument("AdamConfig: eps must be positive");
    }
};

// One (name, parameter, gradient) entry of an update step.
template <typename T>
struct ParamGrad {
    std::string name;
    TensorT<T>* param = nullptr;
    const TensorT<T>* grad = nullptr;
};

template <typename T>
class Adam {
  public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) { cfg_.validate(); }

    const AdamConfig& config() const { return cfg_; }
    std::int64_t step_count() const { return t_; }

    // Applies one bias-corrected update to every entry. Moments are created
    // lazily on first sight of a name; all entries advance on one shared
    // step counter, so every parameter of the group must appear each step.
    void step(const std::vector<ParamGrad<T>>& updates) {
        if (updates.empty()) throw std::invalid_argument("Adam::step: no parameters");
        // validate everything before touching any state: a rejected step must
        // leave parameters, moments, and the step counter untouched
        for (const ParamGrad<T>& u : updates) {
            if (!u.param || !u.grad) throw std::invalid_argument("Adam::step: null entry");
            if (u.param->shape != u.grad->shape)
                throw std::invalid_argument("Adam::step: '" + u.name + "' param shape " +
                                            shape_str(u.param->shape) + " != grad shape " +
                                            shape_str(u.grad->shape));
            auto it = m_.find(u.name);
            if (it != m_.end() && it->second.shape != u.param->shape)
                throw std::invalid_argument("Adam::step: '" + u.name +
                                            "' shape changed since its moments were created");
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (const ParamGrad<T>& u : updates) {
            TensorT<T>& m = moment(m_, u.name, u.param->shape);
            TensorT<T>& v = moment(v_, u.name, u.param->shape);
            for (std::size_t i = 0; i < u.param->v.size(); ++i) {
                const double g = static_cast<double>(u.grad->v[i]);
                const double mi = cfg_.beta1 * static_cast<double>(m.v[i]) + (1.0 - cfg_.beta1) * g;
                const double vi =
                    cfg_.beta2 * static_cast<double>(v.v[i]) + (1.0 - cfg_.beta2) * g * g;
                m.v[i] = static_cast<T>(mi);
                v.v[i] = static_cast<T>(vi);
                const double mhat = static_cast<double>(m.v[i]) / bc1;
                const double vhat = static_cast<double>(v.v[i]) / bc2;
                u.param->v[i] = static_cast<T>(static_cast<double>(u.param->v[i]) -
                                               cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    // Serializes moments into `sink` under `<prefix>m/<name>`, `<prefix>v/<name>`
    // plus a one-element `<prefix>t` step counter.
    void save_into(std::map<std::string, TensorT<T>>& sink, const std::string& prefix) const {
        for (const auto& [name, m] : m_) sink[prefix + "m/" + name] = m;
        for (const auto& [name, v] : v_) sink[prefix + "v/" + name] = v;
        TensorT<T> t(Shape{1});
        t.v[0] = static_cast<T>(t_);
        sink[prefix + "t"] = t;
    }

    void load_from(const std::map<std::string, TensorT<T>>& src, const std::string& prefix) {
        m_.clear();
        v_.clear();
        t_ = 0;
        const std::string mkey = prefix + "m/", vkey = prefix + "v/", tkey = prefix + "t";
        for (const auto& [name, ten] : src) {
            if (name.rfind(mkey, 0) == 0)
                m_[name.substr(mkey.size())] = ten;
            else if (name.rfind(vkey, 0) == 0)
                v_[name.substr(vkey.size())] = ten;
            else if (name == tkey) {
                if (ten.size() != 1)
                    throw std::invalid_argument("Adam::load_from: malformed step counter");
                t_ = static_cast<std::int64_t>(ten.v[0]);
            }
        }
        if (m_.size() != v_.size())
            throw std::invalid_argument("Adam::load_from: first/second moment tables disagree");
    }

    bool operator==(const Adam& o) const {
        if (t_ != o.t_ || m_.size() != o.m_.size() || v_.size() != o.v_.size()) return false;
        auto eq = [](const std::map<std::string, TensorT<T>>& a,
                     const std::map<std::string, TensorT<T>>& b) {
            for (const auto& [name, ten] : a) {
                auto it = b.find(name);
                if (it == b.end() || it->second.shape != ten.shape || it->second.v != ten.v)
                    return false;
            }
            return true;
        };
        return eq(m_, o.m_) && eq(v_, o.v_);
    }

  private:
    TensorT<T>& moment(std::map<std::string, TensorT<T>>& table, const std::string& name,
                       const Shape& shape) {
        auto it = table.find(name);
        if (it == table.end()) it = table.emplace(name, TensorT<T>(shape)).first;
        if (it->second.shape != shape)
            throw std::invalid_argument("Adam: moment shape changed for '" + name + "'");
        return it->second;
    }

    AdamConfig cfg_;
    std::int64_t t_ = 0;
    std::map<std::string, TensorT<T>> m_, v_;
};

}  // namespace noisegen
