#pragma once

// Reverse-mode automatic differentiation over Eigen matrices, specialized to
// what the policy network needs: dense matmul/attention plumbing, row-wise
// normalizations, and fused masked-softmax statistics that stay finite when
// most of a row is masked out.
//
// Usage: build a Tape, run the forward pass through ops (each returns a
// Value handle), call backward(loss) on a 1x1 Value, then read accumulated
// parameter gradients with grad(&param). A non-recording tape computes the
// same forward values but skips all bookkeeping (inference mode).

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace vaproute::ad {

using Mat = Eigen::MatrixXd;

class Tape;

// Lightweight handle into a tape. Copyable; valid while the tape lives and
// has not been truncated past it.
struct Value {
    Tape* tape = nullptr;
    int idx = -1;

    bool valid() const { return tape != nullptr && idx >= 0; }
    const Mat& val() const;
    long rows() const { return val().rows(); }
    long cols() const { return val().cols(); }
    double scalar() const;
};

class Tape {
  public:
    explicit Tape(bool recording = true) : recording_(recording) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    std::size_t size() const { return nodes_.size(); }

    // Rollback support: forward work after mark() can be discarded.
    std::size_t mark() const { return nodes_.size(); }
    void truncate(std::size_t m) {
        if (m > nodes_.size()) throw std::logic_error("tape: truncate past the end");
        nodes_.resize(m);
        for (auto it = leaves_.begin(); it != leaves_.end();) {
            if (it->second >= static_cast<int>(m))
                it = leaves_.erase(it);
            else
                ++it;
        }
    }

    // ---- node creation ----

    // Trainable parameter: gradients accumulate, node is cached per pointer
    // so repeated use hits the same tape slot.
    Value leaf(const Mat* param) {
        auto it = leaves_.find(param);
        if (it != leaves_.end()) return {this, it->second};
        const int idx = push(*param);
        leaves_.emplace(param, idx);
        return {this, idx};
    }

    // Non-trainable input: participates in the forward pass, receives no
    // gradient of its own and stops backpropagation.
    Value constant(Mat m) { return {this, push(std::move(m))}; }

    // Stop-gradient: same value, no parents.
    Value detach(Value v) { return constant(v.val()); }

    // ---- arithmetic ----

    Value add(Value a, Value b) {
        check_same_shape(a, b, "add");
        Value out{this, push(a.val() + b.val())};
        if (recording_) {
            attach(out, [this, out, a, b]() {
                const Mat& g = nodes_[out.idx].grad;
                accumulate(a.idx, g);
                accumulate(b.idx, g);
            });
        }
        return out;
    }

    Value sub(Value a, Value b) {
        check_same_shape(a, b, "sub");
        Value out{this, push(a.val() - b.val())};
        if (recording_) {
            attach(out, [this, out, a, b]() {
                const Mat& g = nodes_[out.idx].grad;
                accumulate(a.idx, g);
                accumulate(b.idx, -g);
            });
        }
        return out;
    }

    Value scale(Value a, double s) {
        Value out{this, push(a.val() * s)};
        if (recording_) {
            attach(out, [this, out, a, s]() {
                accumulate(a.idx, nodes_[out.idx].grad * s);
            });
        }
        return out;
    }

    Value hadamard(Value a, Value b) {
        check_same_shape(a, b, "hadamard");
        Value out{this, push(a.val().cwiseProduct(b.val()))};
        if (recording_) {
            attach(out, [this, out, a, b]() {
                const Mat& g = nodes_[out.idx].grad;
                accumulate(a.idx, g.cwiseProduct(b.val()));
                accumulate(b.idx, g.cwiseProduct(a.val()));
            });
        }
        return out;
    }

    // C = A * B
    Value matmul(Value a, Value b) {
        if (a.cols() != b.rows()) shape_error("matmul", a, b);
        Value out{this, push(a.val() * b.val())};
        if (recording_) {
            attach(out, [this, out, a, b]() {
                const Mat& g = nodes_[out.idx].grad;
                accumulate(a.idx, g * b.val().transpose());
                accumulate(b.idx, a.val().transpose() * g);
            });
        }
        return out;
    }

    // C = A * B^T
    Value matmul_nt(Value a, Value b) {
        if (a.cols() != b.cols()) shape_error("matmul_nt", a, b);
        Value out{this, push(a.val() * b.val().transpose())};
        if (recording_) {
            attach(out, [this, out, a, b]() {
                const Mat& g = nodes_[out.idx].grad;
                accumulate(a.idx, g * b.val());
                accumulate(b.idx, g.transpose() * a.val());
            });
        }
        return out;
    }

    // A + broadcast row r (bias add)
    Value add_rowvec(Value a, Value r) {
        if (r.rows() != 1 || r.cols() != a.cols()) shape_error("add_rowvec", a, r);
        Mat v = a.val();
        v.rowwise() += Eigen::RowVectorXd(r.val().row(0));
        Value out{this, push(std::move(v))};
        if (recording_) {
            attach(out, [this, out, a, r]() {
                const Mat& g = nodes_[out.idx].grad;
                accumulate(a.idx, g);
                accumulate(r.idx, g.colwise().sum());
            });
        }
        return out;
    }

    // A per-row scaled by broadcast row r (normalization gain)
    Value mul_rowvec(Value a, Value r) {
        if (r.rows() != 1 || r.cols() != a.cols()) shape_error("mul_rowvec", a, r);
        Mat v = a.val().array().rowwise() * r.val().row(0).array();
        Value out{this, push(std::move(v))};
        if (recording_) {
            attach(out, [this, out, a, r]() {
                const Mat& g = nodes_[out.idx].grad;
                accumulate(a.idx, g.array().rowwise() * r.val().row(0).array());
                accumulate(r.idx, g.cwiseProduct(a.val()).colwise().sum());
            });
        }
        return out;
    }

    Value concat_rows(const std::vector<Value>& parts) {
        if (parts.empty()) throw std::logic_error("concat_rows: empty");
        long rows = 0;
        const long cols = parts.front().cols();
        for (const Value& p : parts) {
            if (p.cols() != cols) throw std::logic_error("concat_rows: column mismatch");
            rows += p.rows();
        }
        Mat v(rows, cols);
        long r = 0;
        for (const Value& p : parts) {
            v.middleRows(r, p.rows()) = p.val();
            r += p.rows();
        }
        Value out{this, push(std::move(v))};
        if (recording_) {
            attach(out, [this, out, parts]() {
                const Mat& g = nodes_[out.idx].grad;
                long r2 = 0;
                for (const Value& p : parts) {
                    accumulate(p.idx, g.middleRows(r2, p.rows()));
                    r2 += p.rows();
                }
            });
        }
        return out;
    }

    Value concat_cols(const std::vector<Value>& parts) {
        if (parts.empty()) throw std::logic_error("concat_cols: empty");
        long cols = 0;
        const long rows = parts.front().rows();
        for (const Value& p : parts) {
            if (p.rows() != rows) throw std::logic_error("concat_cols: row mismatch");
            cols += p.cols();
        }
        Mat v(rows, cols);
        long c = 0;
        for (const Value& p : parts) {
            v.middleCols(c, p.cols()) = p.val();
            c += p.cols();
        }
        Value out{this, push(std::move(v))};
        if (recording_) {
            attach(out, [this, out, parts]() {
                const Mat& g = nodes_[out.idx].grad;
                long c2 = 0;
                for (const Value& p : parts) {
                    accumulate(p.idx, g.middleCols(c2, p.cols()));
                    c2 += p.cols();
                }
            });
        }
        return out;
    }

    Value slice_rows(Value a, long r0, long n) {
        if (r0 < 0 || r0 + n > a.rows()) throw std::logic_error("slice_rows: out of range");
        Value out{this, push(a.val().middleRows(r0, n))};
        if (recording_) {
            attach(out, [this, out, a, r0, n]() {
                Mat g = Mat::Zero(a.rows(), a.cols());
                g.middleRows(r0, n) = nodes_[out.idx].grad;
                accumulate(a.idx, g);
            });
        }
        return out;
    }

    Value slice_cols(Value a, long c0, long n) {
        if (c0 < 0 || c0 + n > a.cols()) throw std::logic_error("slice_cols: out of range");
        Value out{this, push(a.val().middleCols(c0, n))};
        if (recording_) {
            attach(out, [this, out, a, c0, n]() {
                Mat g = Mat::Zero(a.rows(), a.cols());
                g.middleCols(c0, n) = nodes_[out.idx].grad;
                accumulate(a.idx, g);
            });
        }
        return out;
    }

    // ---- nonlinearities ----

    Value silu(Value a) {
        const Mat sig = (1.0 / (1.0 + (-a.val().array()).exp())).matrix();
        Value out{this, push(a.val().cwiseProduct(sig))};
        if (recording_) {
            attach(out, [this, out, a, sig]() {
                const Mat& g = nodes_[out.idx].grad;
                const Mat d =
                    sig.array() * (1.0 + a.val().array() * (1.0 - sig.array()));
                accumulate(a.idx, g.cwiseProduct(d));
            });
        }
        return out;
    }

    Value tanh(Value a) {
        Value out{this, push(a.val().array().tanh().matrix())};
        if (recording_) {
            attach(out, [this, out, a]() {
                const Mat& y = nodes_[out.idx].value;
                const Mat& g = nodes_[out.idx].grad;
                accumulate(a.idx, (g.array() * (1.0 - y.array().square())).matrix());
            });
        }
        return out;
    }

    // ---- reductions ----

    Value sum(Value a) {
        Value out{this, push(Mat::Constant(1, 1, a.val().sum()))};
        if (recording_) {
            attach(out, [this, out, a]() {
                const double g = nodes_[out.idx].grad(0, 0);
                accumulate(a.idx, Mat::Constant(a.rows(), a.cols(), g));
            });
        }
        return out;
    }

    Value mean(Value a) {
        const double n = static_cast<double>(a.rows() * a.cols());
        Value out{this, push(Mat::Constant(1, 1, a.val().sum() / n))};
        if (recording_) {
            attach(out, [this, out, a, n]() {
                const double g = nodes_[out.idx].grad(0, 0) / n;
                accumulate(a.idx, Mat::Constant(a.rows(), a.cols(), g));
            });
        }
        return out;
    }

    // ---- normalizations (row-wise) ----

    static constexpr double kNormEps = 1e-5;

    // (x - mean) / sqrt(var + eps) per row, no gain.
    Value layer_norm(Value a) {
        const Mat& x = a.val();
        const long n = x.cols();
        Mat y(x.rows(), n);
        Mat inv_std(x.rows(), 1);
        for (long i = 0; i < x.rows(); ++i) {
            const double mu = x.row(i).mean();
            const double var = (x.row(i).array() - mu).square().mean();
            const double is = 1.0 / std::sqrt(var + kNormEps);
            y.row(i) = ((x.row(i).array() - mu) * is).matrix();
            inv_std(i, 0) = is;
        }
        Value out{this, push(std::move(y))};
        if (recording_) {
            attach(out, [this, out, a, inv_std]() {
                const Mat& yv = nodes_[out.idx].value;
                const Mat& g = nodes_[out.idx].grad;
                Mat dx(yv.rows(), yv.cols());
                for (long i = 0; i < yv.rows(); ++i) {
                    const double gm = g.row(i).mean();
                    const double gym = g.row(i).cwiseProduct(yv.row(i)).mean();
                    dx.row(i) =
                        ((g.row(i).array() - gm - yv.row(i).array() * gym) * inv_std(i, 0))
                            .matrix();
                }
                accumulate(a.idx, dx);
            });
        }
        return out;
    }

    // x / sqrt(mean(x^2) + eps) per row, no gain.
    Value rms_norm(Value a) {
        const Mat& x = a.val();
        Mat y(x.rows(), x.cols());
        Mat inv_rms(x.rows(), 1);
        for (long i = 0; i < x.rows(); ++i) {
            const double ms = x.row(i).array().square().mean();
            const double ir = 1.0 / std::sqrt(ms + kNormEps);
            y.row(i) = x.row(i) * ir;
            inv_rms(i, 0) = ir;
        }
        Value out{this, push(std::move(y))};
        if (recording_) {
            attach(out, [this, out, a, inv_rms]() {
                const Mat& yv = nodes_[out.idx].value;
                const Mat& g = nodes_[out.idx].grad;
                Mat dx(yv.rows(), yv.cols());
                for (long i = 0; i < yv.rows(); ++i) {
                    const double gym = g.row(i).cwiseProduct(yv.row(i)).mean();
                    dx.row(i) =
                        ((g.row(i).array() - yv.row(i).array() * gym) * inv_rms(i, 0)).matrix();
                }
                accumulate(a.idx, dx);
            });
        }
        return out;
    }

    Value softmax_rows(Value a) {
        const Mat& x = a.val();
        Mat y(x.rows(), x.cols());
        for (long i = 0; i < x.rows(); ++i) {
            const double m = x.row(i).maxCoeff();
            Eigen::ArrayXd e = (x.row(i).array() - m).exp();
            y.row(i) = (e / e.sum()).matrix();
        }
        Value out{this, push(std::move(y))};
        if (recording_) {
            attach(out, [this, out, a]() {
                const Mat& yv = nodes_[out.idx].value;
                const Mat& g = nodes_[out.idx].grad;
                Mat dx(yv.rows(), yv.cols());
                for (long i = 0; i < yv.rows(); ++i) {
                    const double dot = g.row(i).dot(yv.row(i));
                    dx.row(i) = yv.row(i).cwiseProduct(
                        (g.row(i).array() - dot).matrix());
                }
                accumulate(a.idx, dx);
            });
        }
        return out;
    }

    // ---- fused masked-softmax statistics ----
    // Both take a 1 x A logits row plus a boolean mask and never materialize
    // -inf, so downstream arithmetic stays NaN-free even with one legal action.

    // log softmax(logits | mask)[pick]; pick must be mask-true.
    Value masked_logprob(Value logits, const std::vector<char>& mask, int pick) {
        check_row(logits, mask, "masked_logprob");
        if (pick < 0 || pick >= static_cast<int>(mask.size()) || !mask[pick])
            throw std::logic_error("masked_logprob: picked action is masked");
        const Mat& z = logits.val();
        const double lse = masked_lse(z, mask);
        Value out{this, push(Mat::Constant(1, 1, z(0, pick) - lse))};
        if (recording_) {
            attach(out, [this, out, logits, mask, pick, lse]() {
                const double g = nodes_[out.idx].grad(0, 0);
                const Mat& zv = nodes_[logits.idx].value;
                Mat dz = Mat::Zero(1, zv.cols());
                for (int j = 0; j < zv.cols(); ++j)
                    if (mask[j]) dz(0, j) = -g * std::exp(zv(0, j) - lse);
                dz(0, pick) += g;
                accumulate(logits.idx, dz);
            });
        }
        return out;
    }

    // Shannon entropy of softmax(logits | mask); zero when one action is legal.
    Value masked_entropy(Value logits, const std::vector<char>& mask) {
        check_row(logits, mask, "masked_entropy");
        const Mat& z = logits.val();
        const double lse = masked_lse(z, mask);
        double h = 0.0;
        for (int j = 0; j < z.cols(); ++j) {
            if (!mask[j]) continue;
            const double lp = z(0, j) - lse;
            h -= std::exp(lp) * lp;
        }
        Value out{this, push(Mat::Constant(1, 1, h))};
        if (recording_) {
            attach(out, [this, out, logits, mask, lse, h]() {
                const double g = nodes_[out.idx].grad(0, 0);
                const Mat& zv = nodes_[logits.idx].value;
                Mat dz = Mat::Zero(1, zv.cols());
                for (int j = 0; j < zv.cols(); ++j) {
                    if (!mask[j]) continue;
                    const double lp = zv(0, j) - lse;
                    dz(0, j) = -g * std::exp(lp) * (lp + h);
                }
                accumulate(logits.idx, dz);
            });
        }
        return out;
    }

    // Masked probabilities as plain numbers (for sampling; not a tape op).
    static std::vector<double> masked_softmax(const Mat& logits,
                                              const std::vector<char>& mask) {
        if (logits.rows() != 1 || logits.cols() != static_cast<long>(mask.size()))
            throw std::logic_error("masked_softmax: shape mismatch");
        const double lse = masked_lse(logits, mask);
        std::vector<double> p(mask.size(), 0.0);
        for (std::size_t j = 0; j < mask.size(); ++j)
            if (mask[j]) p[j] = std::exp(logits(0, static_cast<long>(j)) - lse);
        return p;
    }

    // ---- backward ----

    void backward(Value loss) {
        if (!recording_) throw std::logic_error("tape: backward on a non-recording tape");
        if (loss.tape != this) throw std::logic_error("tape: foreign value");
        if (loss.rows() != 1 || loss.cols() != 1)
            throw std::logic_error("tape: loss must be 1x1");
        for (auto& n : nodes_) n.grad.resize(0, 0);
        nodes_[loss.idx].grad = Mat::Ones(1, 1);
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            if (nodes_[i].grad.size() == 0 || !nodes_[i].backward_fn) continue;
            nodes_[i].backward_fn();
        }
    }

    // Accumulated gradient of a parameter leaf after backward; zero matrix if
    // the parameter never entered the graph or received no gradient.
    Mat grad(const Mat* param) const {
        auto it = leaves_.find(param);
        if (it == leaves_.end()) return Mat::Zero(param->rows(), param->cols());
        const Mat& g = nodes_[it->second].grad;
        if (g.size() == 0) return Mat::Zero(param->rows(), param->cols());
        return g;
    }

    const Mat& value_of(int idx) const { return nodes_[idx].value; }

  private:
    struct TapeNode {
        Mat value;
        Mat grad;  // empty until backward touches it
        std::function<void()> backward_fn;
    };

    int push(Mat m) {
        nodes_.push_back(TapeNode{std::move(m), Mat(), nullptr});
        return static_cast<int>(nodes_.size()) - 1;
    }

    void attach(Value out, std::function<void()> fn) {
        nodes_[out.idx].backward_fn = std::move(fn);
    }

    void accumulate(int idx, const Mat& g) {
        Mat& dst = nodes_[idx].grad;
        if (dst.size() == 0)
            dst = g;
        else
            dst += g;
    }

    static double masked_lse(const Mat& z, const std::vector<char>& mask) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < mask.size(); ++j)
            if (mask[j]) m = std::max(m, z(0, static_cast<long>(j)));
        if (m == -std::numeric_limits<double>::infinity())
            throw std::logic_error("masked softmax: all actions masked");
        double s = 0.0;
        for (std::size_t j = 0; j < mask.size(); ++j)
            if (mask[j]) s += std::exp(z(0, static_cast<long>(j)) - m);
        return m + std::log(s);
    }

    static void check_same_shape(Value a, Value b, const char* op) {
        if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, a, b);
    }

    static void check_row(Value logits, const std::vector<char>& mask, const char* op) {
        if (logits.rows() != 1 || logits.cols() != static_cast<long>(mask.size()))
            throw std::logic_error(std::string(op) + ": logits/mask shape mismatch");
    }

    [[noreturn]] static void shape_error(const char* op, Value a, Value b) {
        throw std::logic_error(std::string(op) + ": shape mismatch (" +
                               std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                               " vs " + std::to_string(b.rows()) + "x" +
                               std::to_string(b.cols()) + ")");
    }

    std::vector<TapeNode> nodes_;
    std::unordered_map<const Mat*, int> leaves_;
    bool recording_;

    friend struct Value;
};

inline const Mat& Value::val() const { return tape->value_of(idx); }

inline double Value::scalar() const {
    const Mat& m = val();
    if (m.rows() != 1 || m.cols() != 1) throw std::logic_error("scalar() on non-1x1 value");
    return m(0, 0);
}

}  // namespace vaproute::ad
