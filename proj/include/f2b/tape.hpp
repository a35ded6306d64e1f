// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "f2b/tensor.hpp"

namespace f2b {

// Reverse-mode tape. Nodes are appended in execution order, so operands of
// node i always sit at indices < i and one reverse sweep visits every node
// exactly once. A tape is confined to one thread; distinct tapes are
// independent.
template <class S>
class Tape {
  public:
    using Id = int32_t;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    const Tensor<S>& val(Id id) const { return nodes_[check_id(id)].out; }
    const std::vector<S>& grad(Id id) const { return nodes_[check_id(id)].grad; }
    S scalar(Id id) const {
        const Tensor<S>& t = val(id);
        if (t.size() != 1) throw contract_error("scalar() on non-scalar node");
        return t.data[0];
    }
    size_t node_count() const { return nodes_.size(); }

    // ---- leaves ----------------------------------------------------------

    Id constant(Tensor<S> t) { return push(std::move(t), {}, false, nullptr); }

    // Leaf view of a parameter; repeated registration returns the same node,
    // so gradients from every use accumulate once into p.grad.
    Id param(Param<S>& p) {
        auto it = param_cache_.find(&p);
        if (it != param_cache_.end()) return it->second;
        Tensor<S> copy = p.value;
        Param<S>* ptr = &p;
        Id id = push(std::move(copy), {}, true, nullptr);
        nodes_[id].back = [ptr](Tape& tp, Id self) {
            const std::vector<S>& g = tp.nodes_[self].grad;
            for (size_t i = 0; i < g.size(); ++i) ptr->grad[i] += g[i];
        };
        param_cache_.emplace(&p, id);
        return id;
    }

    // ---- arithmetic ------------------------------------------------------

    Id matmul(Id a, Id b) {
        const Tensor<S>& A = val(a);
        const Tensor<S>& B = val(b);
        if (A.rank() != 2 || B.rank() != 2) throw dim_error("matmul expects matrices");
        if (A.cols() != B.rows()) throw dim_error("matmul inner dimensions disagree");
        if (!A.all_finite() || !B.all_finite()) throw numeric_error("matmul input not finite");
        Tensor<S> C({A.rows(), B.cols()});
        emap(C) = cmap(A) * cmap(B);
        Id id = push(std::move(C), {a, b}, needs(a) || needs(b), nullptr);
        nodes_[id].back = [a, b](Tape& tp, Id self) {
            auto dC = tp.gmap(self);
            if (tp.needs(a)) tp.gmap(a) += dC * tp.cmap(tp.val(b)).transpose();
            if (tp.needs(b)) tp.gmap(b) += tp.cmap(tp.val(a)).transpose() * dC;
        };
        return id;
    }

    // C = A * B^T with B given row-major [n,k]; used for attention scores and
    // similarity matrices.
    Id matmul_nt(Id a, Id b) {
        const Tensor<S>& A = val(a);
        const Tensor<S>& B = val(b);
        if (A.rank() != 2 || B.rank() != 2) throw dim_error("matmul_nt expects matrices");
        if (A.cols() != B.cols()) throw dim_error("matmul_nt inner dimensions disagree");
        if (!A.all_finite() || !B.all_finite()) throw numeric_error("matmul input not finite");
        Tensor<S> C({A.rows(), B.rows()});
        emap(C) = cmap(A) * cmap(B).transpose();
        Id id = push(std::move(C), {a, b}, needs(a) || needs(b), nullptr);
        nodes_[id].back = [a, b](Tape& tp, Id self) {
            auto dC = tp.gmap(self);
            if (tp.needs(a)) tp.gmap(a) += dC * tp.cmap(tp.val(b));
            if (tp.needs(b)) tp.gmap(b) += dC.transpose() * tp.cmap(tp.val(a));
        };
        return id;
    }

    Id add(Id a, Id b) {
        const Tensor<S>& A = val(a);
        const Tensor<S>& B = val(b);
        if (!same_shape(A, B)) throw dim_error("add shape mismatch");
        Tensor<S> C = A;
        for (int64_t i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
        Id id = push(std::move(C), {a, b}, needs(a) || needs(b), nullptr);
        nodes_[id].back = [a, b](Tape& tp, Id self) {
            const std::vector<S>& g = tp.nodes_[self].grad;
            if (tp.needs(a)) {
                std::vector<S>& ga = tp.nodes_[a].grad;
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (tp.needs(b)) {
                std::vector<S>& gb = tp.nodes_[b].grad;
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        };
        return id;
    }

    Id scale(Id a, S c) {
        Tensor<S> C = val(a);
        for (S& v : C.data) v *= c;
        Id id = push(std::move(C), {a}, needs(a), nullptr);
        nodes_[id].back = [a, c](Tape& tp, Id self) {
            if (!tp.needs(a)) return;
            const std::vector<S>& g = tp.nodes_[self].grad;
            std::vector<S>& ga = tp.nodes_[a].grad;
            for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
        };
        return id;
    }

    // ---- structure -------------------------------------------------------

    Id rows_concat(const std::vector<Id>& parts) {
        if (parts.empty()) throw dim_error("rows_concat of nothing");
        int cols = val(parts[0]).cols();
        int rows = 0;
        bool ng = false;
        for (Id p : parts) {
            if (val(p).cols() != cols) throw dim_error("rows_concat column mismatch");
            rows += val(p).rows();
            ng = ng || needs(p);
        }
        Tensor<S> C({rows, cols});
        int64_t off = 0;
        for (Id p : parts) {
            const Tensor<S>& t = val(p);
            std::copy(t.data.begin(), t.data.end(), C.data.begin() + off);
            off += t.size();
        }
        std::vector<Id> ops = parts;
        Id id = push(std::move(C), ops, ng, nullptr);
        nodes_[id].back = [ops](Tape& tp, Id self) {
            const std::vector<S>& g = tp.nodes_[self].grad;
            int64_t off2 = 0;
            for (Id p : ops) {
                int64_t n = tp.val(p).size();
                if (tp.needs(p)) {
                    std::vector<S>& gp = tp.nodes_[p].grad;
                    for (int64_t i = 0; i < n; ++i) gp[i] += g[off2 + i];
                }
                off2 += n;
            }
        };
        return id;
    }

    Id rows_slice(Id a, int r0, int r1) {
        const Tensor<S>& A = val(a);
        if (A.rank() != 2 || r0 < 0 || r1 > A.rows() || r0 >= r1) throw dim_error("rows_slice range");
        int cols = A.cols();
        Tensor<S> C({r1 - r0, cols});
        std::copy(A.data.begin() + static_cast<int64_t>(r0) * cols,
                  A.data.begin() + static_cast<int64_t>(r1) * cols, C.data.begin());
        Id id = push(std::move(C), {a}, needs(a), nullptr);
        nodes_[id].back = [a, r0, cols](Tape& tp, Id self) {
            if (!tp.needs(a)) return;
            const std::vector<S>& g = tp.nodes_[self].grad;
            std::vector<S>& ga = tp.nodes_[a].grad;
            int64_t base = static_cast<int64_t>(r0) * cols;
            for (size_t i = 0; i < g.size(); ++i) ga[base + i] += g[i];
        };
        return id;
    }

    Id cols_slice(Id a, int c0, int c1) {
        const Tensor<S>& A = val(a);
        if (A.rank() != 2 || c0 < 0 || c1 > A.cols() || c0 >= c1) throw dim_error("cols_slice range");
        int rows = A.rows(), cols = A.cols(), w = c1 - c0;
        Tensor<S> C({rows, w});
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < w; ++c) C.data[static_cast<int64_t>(r) * w + c] = A.data[static_cast<int64_t>(r) * cols + c0 + c];
        Id id = push(std::move(C), {a}, needs(a), nullptr);
        nodes_[id].back = [a, c0, rows, cols, w](Tape& tp, Id self) {
            if (!tp.needs(a)) return;
            const std::vector<S>& g = tp.nodes_[self].grad;
            std::vector<S>& ga = tp.nodes_[a].grad;
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < w; ++c) ga[static_cast<int64_t>(r) * cols + c0 + c] += g[static_cast<int64_t>(r) * w + c];
        };
        return id;
    }

    Id cols_concat(const std::vector<Id>& parts) {
        if (parts.empty()) throw dim_error("cols_concat of nothing");
        int rows = val(parts[0]).rows();
        int cols = 0;
        bool ng = false;
        for (Id p : parts) {
            if (val(p).rows() != rows) throw dim_error("cols_concat row mismatch");
            cols += val(p).cols();
            ng = ng || needs(p);
        }
        Tensor<S> C({rows, cols});
        int off = 0;
        for (Id p : parts) {
            const Tensor<S>& t = val(p);
            int w = t.cols();
            for (int r = 0; r < rows; ++r)
                std::copy(t.data.begin() + static_cast<int64_t>(r) * w, t.data.begin() + static_cast<int64_t>(r + 1) * w,
                          C.data.begin() + static_cast<int64_t>(r) * cols + off);
            off += w;
        }
        std::vector<Id> ops = parts;
        Id id = push(std::move(C), ops, ng, nullptr);
        nodes_[id].back = [ops, rows, cols](Tape& tp, Id self) {
            const std::vector<S>& g = tp.nodes_[self].grad;
            int off2 = 0;
            for (Id p : ops) {
                int w = tp.val(p).cols();
                if (tp.needs(p)) {
                    std::vector<S>& gp = tp.nodes_[p].grad;
                    for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < w; ++c) gp[static_cast<int64_t>(r) * w + c] += g[static_cast<int64_t>(r) * cols + off2 + c];
                }
                off2 += w;
            }
        };
        return id;
    }

    // Row gather from an embedding table; backward scatter-adds.
    Id embed(Id table, std::vector<int> ids) {
        const Tensor<S>& T = val(table);
        if (T.rank() != 2) throw dim_error("embed expects a matrix table");
        if (ids.empty()) throw dim_error("embed of empty id list");
        int d = T.cols();
        for (int i : ids)
            if (i < 0 || i >= T.rows()) throw contract_error("index error: embedding id out of range");
        Tensor<S> C({static_cast<int>(ids.size()), d});
        for (size_t r = 0; r < ids.size(); ++r)
            std::copy(T.data.begin() + static_cast<int64_t>(ids[r]) * d, T.data.begin() + static_cast<int64_t>(ids[r] + 1) * d,
                      C.data.begin() + static_cast<int64_t>(r) * d);
        Id id = push(std::move(C), {table}, needs(table), nullptr);
        nodes_[id].back = [table, ids = std::move(ids), d](Tape& tp, Id self) {
            if (!tp.needs(table)) return;
            const std::vector<S>& g = tp.nodes_[self].grad;
            std::vector<S>& gt = tp.nodes_[table].grad;
            for (size_t r = 0; r < ids.size(); ++r)
                for (int c = 0; c < d; ++c) gt[static_cast<int64_t>(ids[r]) * d + c] += g[static_cast<int64_t>(r) * d + c];
        };
        return id;
    }

    // ---- nonlinear -------------------------------------------------------

    Id rmsnorm(Id x, Id gain, S eps) {
        const Tensor<S>& X = val(x);
        const Tensor<S>& G = val(gain);
        if (X.rank() != 2) throw dim_error("rmsnorm expects a matrix");
        if (G.size() != X.cols()) throw dim_error("rmsnorm gain size mismatch");
        int n = X.rows(), d = X.cols();
        Tensor<S> Y({n, d});
        std::vector<S> inv_rms(static_cast<size_t>(n));
        for (int r = 0; r < n; ++r) {
            S ss = 0;
            for (int c = 0; c < d; ++c) {
                S v = X.at(r, c);
                ss += v * v;
            }
            S ir = S(1) / std::sqrt(ss / S(d) + eps);
            inv_rms[r] = ir;
            for (int c = 0; c < d; ++c) Y.at(r, c) = X.at(r, c) * ir * G.data[c];
        }
        Id id = push(std::move(Y), {x, gain}, needs(x) || needs(gain), nullptr);
        nodes_[id].back = [x, gain, inv_rms = std::move(inv_rms), n, d](Tape& tp, Id self) {
            const std::vector<S>& g = tp.nodes_[self].grad;
            const Tensor<S>& X2 = tp.val(x);
            const Tensor<S>& G2 = tp.val(gain);
            for (int r = 0; r < n; ++r) {
                S ir = inv_rms[r];
                S dot = 0;  // sum_c dY_rc * g_c * x_rc
                for (int c = 0; c < d; ++c) dot += g[static_cast<int64_t>(r) * d + c] * G2.data[c] * X2.at(r, c);
                if (tp.needs(x)) {
                    std::vector<S>& gx = tp.nodes_[x].grad;
                    S k = ir * ir * ir / S(d) * dot;
                    for (int c = 0; c < d; ++c)
                        gx[static_cast<int64_t>(r) * d + c] += g[static_cast<int64_t>(r) * d + c] * G2.data[c] * ir - X2.at(r, c) * k;
                }
                if (tp.needs(gain)) {
                    std::vector<S>& gg = tp.nodes_[gain].grad;
                    for (int c = 0; c < d; ++c) gg[c] += g[static_cast<int64_t>(r) * d + c] * X2.at(r, c) * ir;
                }
            }
        };
        return id;
    }

    Id gelu(Id x) {
        const Tensor<S>& X = val(x);
        Tensor<S> Y = X;
        const S k = S(0.7978845608028654);  // sqrt(2/pi)
        const S c3 = S(0.044715);
        for (S& v : Y.data) {
            S u = k * (v + c3 * v * v * v);
            v = S(0.5) * v * (S(1) + std::tanh(u));
        }
        Id id = push(std::move(Y), {x}, needs(x), nullptr);
        nodes_[id].back = [x, k, c3](Tape& tp, Id self) {
            if (!tp.needs(x)) return;
            const std::vector<S>& g = tp.nodes_[self].grad;
            const Tensor<S>& X2 = tp.val(x);
            std::vector<S>& gx = tp.nodes_[x].grad;
            for (size_t i = 0; i < g.size(); ++i) {
                S v = X2.data[i];
                S t = std::tanh(k * (v + c3 * v * v * v));
                S dudv = k * (S(1) + S(3) * c3 * v * v);
                S dy = S(0.5) * (S(1) + t) + S(0.5) * v * (S(1) - t * t) * dudv;
                gx[i] += g[i] * dy;
            }
        };
        return id;
    }

    // Plain softmax along an axis of a vector or matrix, max-stabilized.
    Id softmax(Id x, int axis) {
        const Tensor<S>& X = val(x);
        if (X.rank() == 1) {
            if (axis != 0) throw dim_error("softmax axis out of range");
            if (X.shape[0] == 0) throw dim_error("softmax over empty axis");
        } else if (X.rank() == 2) {
            if (axis != 0 && axis != 1) throw dim_error("softmax axis out of range");
            if (X.shape[axis] == 0) throw dim_error("softmax over empty axis");
        } else {
            throw dim_error("softmax expects rank 1 or 2");
        }
        int n, d;  // n independent groups of d entries; stride layout below
        bool along_cols = (X.rank() == 1) || axis == 1;
        if (X.rank() == 1) {
            n = 1;
            d = X.shape[0];
        } else if (along_cols) {
            n = X.shape[0];
            d = X.shape[1];
        } else {
            n = X.shape[1];
            d = X.shape[0];
        }
        auto index = [&](int group, int k) -> int64_t {
            return along_cols ? static_cast<int64_t>(group) * d + k : static_cast<int64_t>(k) * n + group;
        };
        Tensor<S> Y(X.shape);
        for (int gI = 0; gI < n; ++gI) {
            S mx = X.data[index(gI, 0)];
            for (int k = 1; k < d; ++k) mx = std::max(mx, X.data[index(gI, k)]);
            S sum = 0;
            for (int k = 0; k < d; ++k) {
                S e = std::exp(X.data[index(gI, k)] - mx);
                Y.data[index(gI, k)] = e;
                sum += e;
            }
            for (int k = 0; k < d; ++k) Y.data[index(gI, k)] /= sum;
        }
        Id id = push(std::move(Y), {x}, needs(x), nullptr);
        nodes_[id].back = [x, n, d, along_cols](Tape& tp, Id self) {
            if (!tp.needs(x)) return;
            const std::vector<S>& g = tp.nodes_[self].grad;
            const Tensor<S>& Y2 = tp.val(self);
            std::vector<S>& gx = tp.nodes_[x].grad;
            auto index = [&](int group, int k) -> int64_t {
                return along_cols ? static_cast<int64_t>(group) * d + k : static_cast<int64_t>(k) * n + group;
            };
            for (int gI = 0; gI < n; ++gI) {
                S dot = 0;
                for (int k = 0; k < d; ++k) dot += g[index(gI, k)] * Y2.data[index(gI, k)];
                for (int k = 0; k < d; ++k) gx[index(gI, k)] += Y2.data[index(gI, k)] * (g[index(gI, k)] - dot);
            }
        };
        return id;
    }

    // Row-wise softmax over a visible prefix; entries past visible[r] are
    // exactly zero and receive no gradient. Attention masking uses this with
    // visible[r] = r+1 (causal) or full width (bidirectional).
    Id masked_softmax_rows(Id x, std::vector<int> visible) {
        const Tensor<S>& X = val(x);
        if (X.rank() != 2) throw dim_error("masked_softmax_rows expects a matrix");
        int n = X.rows(), d = X.cols();
        if (static_cast<int>(visible.size()) != n) throw dim_error("mask length mismatch");
        Tensor<S> Y({n, d});
        for (int r = 0; r < n; ++r) {
            int w = visible[r];
            if (w < 1 || w > d) throw dim_error("mask prefix out of range");
            S mx = X.at(r, 0);
            for (int c = 1; c < w; ++c) mx = std::max(mx, X.at(r, c));
            S sum = 0;
            for (int c = 0; c < w; ++c) {
                S e = std::exp(X.at(r, c) - mx);
                Y.at(r, c) = e;
                sum += e;
            }
            for (int c = 0; c < w; ++c) Y.at(r, c) /= sum;
            // rest stays 0
        }
        Id id = push(std::move(Y), {x}, needs(x), nullptr);
        nodes_[id].back = [x, visible = std::move(visible), n, d](Tape& tp, Id self) {
            if (!tp.needs(x)) return;
            const std::vector<S>& g = tp.nodes_[self].grad;
            const Tensor<S>& Y2 = tp.val(self);
            std::vector<S>& gx = tp.nodes_[x].grad;
            for (int r = 0; r < n; ++r) {
                int w = visible[r];
                S dot = 0;
                for (int c = 0; c < w; ++c) dot += g[static_cast<int64_t>(r) * d + c] * Y2.at(r, c);
                for (int c = 0; c < w; ++c)
                    gx[static_cast<int64_t>(r) * d + c] += Y2.at(r, c) * (g[static_cast<int64_t>(r) * d + c] - dot);
            }
        };
        return id;
    }

    Id mean_rows(Id x) {
        const Tensor<S>& X = val(x);
        if (X.rank() != 2 || X.rows() == 0) throw dim_error("mean_rows expects a non-empty matrix");
        int n = X.rows(), d = X.cols();
        Tensor<S> Y({1, d});
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < d; ++c) Y.data[c] += X.at(r, c);
        for (int c = 0; c < d; ++c) Y.data[c] /= S(n);
        Id id = push(std::move(Y), {x}, needs(x), nullptr);
        nodes_[id].back = [x, n, d](Tape& tp, Id self) {
            if (!tp.needs(x)) return;
            const std::vector<S>& g = tp.nodes_[self].grad;
            std::vector<S>& gx = tp.nodes_[x].grad;
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < d; ++c) gx[static_cast<int64_t>(r) * d + c] += g[c] / S(n);
        };
        return id;
    }

    // Row-wise L2 normalization; cosine similarity of normalized rows is then
    // a plain dot product.
    Id rows_unit(Id x) {
        const Tensor<S>& X = val(x);
        if (X.rank() != 2) throw dim_error("rows_unit expects a matrix");
        int n = X.rows(), d = X.cols();
        Tensor<S> Y({n, d});
        std::vector<S> inv_norm(static_cast<size_t>(n));
        for (int r = 0; r < n; ++r) {
            S ss = 0;
            for (int c = 0; c < d; ++c) ss += X.at(r, c) * X.at(r, c);
            if (ss == S(0)) throw numeric_error("degenerate input: zero vector in rows_unit");
            S in = S(1) / std::sqrt(ss);
            inv_norm[r] = in;
            for (int c = 0; c < d; ++c) Y.at(r, c) = X.at(r, c) * in;
        }
        Id id = push(std::move(Y), {x}, needs(x), nullptr);
        nodes_[id].back = [x, inv_norm = std::move(inv_norm), n, d](Tape& tp, Id self) {
            if (!tp.needs(x)) return;
            const std::vector<S>& g = tp.nodes_[self].grad;
            const Tensor<S>& Y2 = tp.val(self);
            std::vector<S>& gx = tp.nodes_[x].grad;
            for (int r = 0; r < n; ++r) {
                S dot = 0;
                for (int c = 0; c < d; ++c) dot += g[static_cast<int64_t>(r) * d + c] * Y2.at(r, c);
                for (int c = 0; c < d; ++c)
                    gx[static_cast<int64_t>(r) * d + c] += (g[static_cast<int64_t>(r) * d + c] - dot * Y2.at(r, c)) * inv_norm[r];
            }
        };
        return id;
    }

    // Mean of -log softmax(logits[p])[targets[p]] over the given positions.
    Id cross_entropy(Id logits, std::vector<int> targets, std::vector<int> positions) {
        const Tensor<S>& L = val(logits);
        if (L.rank() != 2) throw dim_error("cross_entropy expects [positions x vocab] logits");
        if (positions.empty()) throw contract_error("cross_entropy over no positions");
        if (targets.size() != positions.size()) throw dim_error("targets/positions length mismatch");
        int V = L.cols();
        for (size_t i = 0; i < positions.size(); ++i) {
            if (positions[i] < 0 || positions[i] >= L.rows()) throw contract_error("index error: position out of range");
            if (targets[i] < 0 || targets[i] >= V) throw contract_error("index error: target out of range");
        }
        S loss = 0;
        for (size_t i = 0; i < positions.size(); ++i) {
            const S* row = &L.data[static_cast<int64_t>(positions[i]) * V];
            S mx = row[0];
            for (int c = 1; c < V; ++c) mx = std::max(mx, row[c]);
            S sum = 0;
            for (int c = 0; c < V; ++c) sum += std::exp(row[c] - mx);
            loss += (std::log(sum) + mx) - row[targets[i]];
        }
        loss /= S(positions.size());
        Tensor<S> out({1});
        out.data[0] = loss;
        Id id = push(std::move(out), {logits}, needs(logits), nullptr);
        nodes_[id].back = [logits, targets = std::move(targets), positions = std::move(positions), V](Tape& tp, Id self) {
            if (!tp.needs(logits)) return;
            S gl = tp.nodes_[self].grad[0] / S(positions.size());
            const Tensor<S>& L2 = tp.val(logits);
            std::vector<S>& gx = tp.nodes_[logits].grad;
            for (size_t i = 0; i < positions.size(); ++i) {
                const S* row = &L2.data[static_cast<int64_t>(positions[i]) * V];
                S* grow = &gx[static_cast<int64_t>(positions[i]) * V];
                S mx = row[0];
                for (int c = 1; c < V; ++c) mx = std::max(mx, row[c]);
                S sum = 0;
                for (int c = 0; c < V; ++c) sum += std::exp(row[c] - mx);
                for (int c = 0; c < V; ++c) {
                    S p = std::exp(row[c] - mx) / sum;
                    grow[c] += gl * (p - (c == targets[i] ? S(1) : S(0)));
                }
            }
        };
        return id;
    }

    // cos(u, v) on equal-length vectors (any shape, flattened).
    Id cosine(Id u, Id v) {
        const Tensor<S>& U = val(u);
        const Tensor<S>& V = val(v);
        if (U.size() != V.size() || U.size() == 0) throw dim_error("cosine length mismatch");
        S uu = 0, vv = 0, uv = 0;
        for (int64_t i = 0; i < U.size(); ++i) {
            uu += U.data[i] * U.data[i];
            vv += V.data[i] * V.data[i];
            uv += U.data[i] * V.data[i];
        }
        if (uu == S(0) || vv == S(0)) throw numeric_error("degenerate input: zero vector in cosine");
        S nu = std::sqrt(uu), nv = std::sqrt(vv);
        S c = uv / (nu * nv);
        Tensor<S> out({1});
        out.data[0] = c;
        Id id = push(std::move(out), {u, v}, needs(u) || needs(v), nullptr);
        nodes_[id].back = [u, v, nu, nv, c](Tape& tp, Id self) {
            S g = tp.nodes_[self].grad[0];
            const Tensor<S>& U2 = tp.val(u);
            const Tensor<S>& V2 = tp.val(v);
            if (tp.needs(u)) {
                std::vector<S>& gu = tp.nodes_[u].grad;
                for (int64_t i = 0; i < U2.size(); ++i)
                    gu[i] += g * (V2.data[i] / (nu * nv) - c * U2.data[i] / (nu * nu));
            }
            if (tp.needs(v)) {
                std::vector<S>& gv = tp.nodes_[v].grad;
                for (int64_t i = 0; i < V2.size(); ++i)
                    gv[i] += g * (U2.data[i] / (nu * nv) - c * V2.data[i] / (nv * nv));
            }
        };
        return id;
    }

    // Symmetric InfoNCE over a BxB similarity matrix with matched pairs on
    // the diagonal: (1/B) sum_k [-log softmax_row_k(S)[k] - log softmax_col_k(S)[k]].
    Id sym_info_nce(Id sims) {
        const Tensor<S>& M = val(sims);
        if (M.rank() != 2 || M.rows() != M.cols() || M.rows() == 0) throw dim_error("sym_info_nce expects square matrix");
        int B = M.rows();
        auto logsumexp_row = [&](int r) {
            S mx = M.at(r, 0);
            for (int c = 1; c < B; ++c) mx = std::max(mx, M.at(r, c));
            S s = 0;
            for (int c = 0; c < B; ++c) s += std::exp(M.at(r, c) - mx);
            return std::log(s) + mx;
        };
        auto logsumexp_col = [&](int c) {
            S mx = M.at(0, c);
            for (int r = 1; r < B; ++r) mx = std::max(mx, M.at(r, c));
            S s = 0;
            for (int r = 0; r < B; ++r) s += std::exp(M.at(r, c) - mx);
            return std::log(s) + mx;
        };
        S loss = 0;
        for (int k = 0; k < B; ++k) loss += (logsumexp_row(k) - M.at(k, k)) + (logsumexp_col(k) - M.at(k, k));
        loss /= S(B);
        Tensor<S> out({1});
        out.data[0] = loss;
        Id id = push(std::move(out), {sims}, needs(sims), nullptr);
        nodes_[id].back = [sims, B](Tape& tp, Id self) {
            if (!tp.needs(sims)) return;
            S g = tp.nodes_[self].grad[0] / S(B);
            const Tensor<S>& M2 = tp.val(sims);
            std::vector<S>& gm = tp.nodes_[sims].grad;
            // row softmax term
            for (int r = 0; r < B; ++r) {
                S mx = M2.at(r, 0);
                for (int c = 1; c < B; ++c) mx = std::max(mx, M2.at(r, c));
                S sum = 0;
                for (int c = 0; c < B; ++c) sum += std::exp(M2.at(r, c) - mx);
                for (int c = 0; c < B; ++c) {
                    S p = std::exp(M2.at(r, c) - mx) / sum;
                    gm[static_cast<int64_t>(r) * B + c] += g * (p - (r == c ? S(1) : S(0)));
                }
            }
            // column softmax term
            for (int c = 0; c < B; ++c) {
                S mx = M2.at(0, c);
                for (int r = 1; r < B; ++r) mx = std::max(mx, M2.at(r, c));
                S sum = 0;
                for (int r = 0; r < B; ++r) sum += std::exp(M2.at(r, c) - mx);
                for (int r = 0; r < B; ++r) {
                    S p = std::exp(M2.at(r, c) - mx) / sum;
                    gm[static_cast<int64_t>(r) * B + c] += g * (p - (r == c ? S(1) : S(0)));
                }
            }
        };
        return id;
    }

    // ---- backward --------------------------------------------------------

    void backward(Id loss) {
        if (ran_backward_) throw contract_error("backward already ran on this tape");
        ran_backward_ = true;
        const Tensor<S>& L = val(loss);
        if (L.size() != 1) throw contract_error("backward root must be scalar");
        for (Id i = 0; i <= loss; ++i) nodes_[i].grad.assign(nodes_[i].out.data.size(), S(0));
        nodes_[loss].grad[0] = S(1);
        for (Id i = loss; i >= 0; --i) {
            if (nodes_[i].needs_grad && nodes_[i].back) nodes_[i].back(*this, i);
        }
    }

  private:
    struct Node {
        Tensor<S> out;
        std::vector<S> grad;
        std::function<void(Tape&, Id)> back;
        bool needs_grad = false;
    };

    // deque keeps references from val() stable while new nodes are appended
    std::deque<Node> nodes_;
    std::unordered_map<const void*, Id> param_cache_;
    bool ran_backward_ = false;

    Id check_id(Id id) const {
        if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) throw contract_error("bad node id");
        return id;
    }

    bool needs(Id id) const { return nodes_[check_id(id)].needs_grad; }

    Id push(Tensor<S> out, const std::vector<Id>& operands, bool needs_grad, std::nullptr_t) {
        (void)operands;
        Node n;
        n.out = std::move(out);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    Eigen::Map<const EMat> cmap(const Tensor<S>& t) const {
        return Eigen::Map<const EMat>(t.data.data(), t.rows(), t.cols());
    }
    Eigen::Map<EMat> emap(Tensor<S>& t) const { return Eigen::Map<EMat>(t.data.data(), t.rows(), t.cols()); }
    Eigen::Map<EMat> gmap(Id id) {
        Node& n = nodes_[id];
        return Eigen::Map<EMat>(n.grad.data(), n.out.rows(), n.out.cols());
    }
};

}  // namespace f2b
