#include "wsed/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "wsed/parallel.hpp"

namespace wsed {

namespace {

void check_rank(const Tensor& t, Index rank, const char* op) {
    if (t.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank-" + std::to_string(rank) +
                         " tensor, got " + t.shape_str());
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Row offsets of each bag inside a ragged [sum(L), C] tensor.
std::vector<Index> ragged_offsets(const std::vector<Index>& lengths) {
    std::vector<Index> off(lengths.size() + 1, 0);
    for (std::size_t i = 0; i < lengths.size(); ++i) off[i + 1] = off[i] + lengths[i];
    return off;
}

/// Fills `dst` with the source matrix shifted by (dt, df) over a [T, F] grid
/// (rows indexed t*F + f), zero outside the grid.
void build_shifted(ConstMatMap src, RowMatrix& dst, Index t_dim, Index f_dim, Index dt, Index df) {
    dst.setZero();
    const Index f_lo = std::max<Index>(0, -df);
    const Index f_len = f_dim - std::abs(df);
    if (f_len <= 0) return;
    const Index t_lo = std::max<Index>(0, -dt);
    const Index t_hi = t_dim - std::max<Index>(0, dt);
    for (Index t = t_lo; t < t_hi; ++t) {
        dst.middleRows(t * f_dim + f_lo, f_len) = src.middleRows((t + dt) * f_dim + f_lo + df, f_len);
    }
}

/// Scatter-add the reverse of build_shifted: acc(srcrows) += m(dstrows).
void scatter_shifted(const RowMatrix& m, MatMap acc, Index t_dim, Index f_dim, Index dt, Index df) {
    const Index f_lo = std::max<Index>(0, -df);
    const Index f_len = f_dim - std::abs(df);
    if (f_len <= 0) return;
    const Index t_lo = std::max<Index>(0, -dt);
    const Index t_hi = t_dim - std::max<Index>(0, dt);
    for (Index t = t_lo; t < t_hi; ++t) {
        acc.middleRows((t + dt) * f_dim + f_lo + df, f_len) += m.middleRows(t * f_dim + f_lo, f_len);
    }
}

} // namespace

NodeId matmul(Graph& g, NodeId a, NodeId b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    check_rank(av, 2, "matmul");
    check_rank(bv, 2, "matmul");
    if (av.dim(1) != bv.dim(0))
        throw ShapeError("matmul: inner dimensions differ, " + av.shape_str() + " vs " + bv.shape_str());
    Tensor out({av.dim(0), bv.dim(1)});
    out.mat().noalias() = av.mat() * bv.mat();
    const bool needs = g.any_requires({a, b});
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        bwd = [a, b, id](Graph& gr) {
            const Tensor& gy = gr.grad(id);
            if (gr.requires_grad(a)) gr.grad(a).mat().noalias() += gy.mat() * gr.value(b).mat().transpose();
            if (gr.requires_grad(b)) gr.grad(b).mat().noalias() += gr.value(a).mat().transpose() * gy.mat();
        };
    }
    return g.add_node("matmul", {a, b}, std::move(out), std::move(bwd), needs);
}

NodeId add(Graph& g, NodeId a, NodeId b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    check_same_shape(av, bv, "add");
    Tensor out(av.shape());
    out.arr() = av.arr() + bv.arr();
    const bool needs = g.any_requires({a, b});
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        bwd = [a, b, id](Graph& gr) {
            const Tensor& gy = gr.grad(id);
            if (gr.requires_grad(a)) gr.grad(a).arr() += gy.arr();
            if (gr.requires_grad(b)) gr.grad(b).arr() += gy.arr();
        };
    }
    return g.add_node("add", {a, b}, std::move(out), std::move(bwd), needs);
}

NodeId add_row(Graph& g, NodeId m, NodeId bias) {
    const Tensor& mv = g.value(m);
    const Tensor& bv = g.value(bias);
    check_rank(mv, 2, "add_row");
    check_rank(bv, 1, "add_row");
    if (mv.dim(1) != bv.dim(0))
        throw ShapeError("add_row: width mismatch " + mv.shape_str() + " vs " + bv.shape_str());
    Tensor out(mv.shape());
    out.mat() = mv.mat().rowwise() + bv.vec().transpose();
    const bool needs = g.any_requires({m, bias});
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        bwd = [m, bias, id](Graph& gr) {
            const Tensor& gy = gr.grad(id);
            if (gr.requires_grad(m)) gr.grad(m).arr() += gy.arr();
            if (gr.requires_grad(bias)) gr.grad(bias).vec() += gy.mat().colwise().sum().transpose();
        };
    }
    return g.add_node("add_row", {m, bias}, std::move(out), std::move(bwd), needs);
}

NodeId mul(Graph& g, NodeId a, NodeId b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    check_same_shape(av, bv, "mul");
    Tensor out(av.shape());
    out.arr() = av.arr() * bv.arr();
    const bool needs = g.any_requires({a, b});
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        bwd = [a, b, id](Graph& gr) {
            const Tensor& gy = gr.grad(id);
            if (gr.requires_grad(a)) gr.grad(a).arr() += gy.arr() * gr.value(b).arr();
            if (gr.requires_grad(b)) gr.grad(b).arr() += gy.arr() * gr.value(a).arr();
        };
    }
    return g.add_node("mul", {a, b}, std::move(out), std::move(bwd), needs);
}

NodeId relu(Graph& g, NodeId x) {
    const Tensor& xv = g.value(x);
    Tensor out(xv.shape());
    out.arr() = xv.arr().max(0.0);
    const bool needs = g.requires_grad(x);
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        bwd = [x, id](Graph& gr) {
            const Tensor& gy = gr.grad(id);
            gr.grad(x).arr() += gy.arr() * (gr.value(x).arr() > 0.0).cast<double>();
        };
    }
    return g.add_node("relu", {x}, std::move(out), std::move(bwd), needs);
}

NodeId tanh_op(Graph& g, NodeId x) {
    const Tensor& xv = g.value(x);
    Tensor out(xv.shape());
    out.arr() = xv.arr().tanh();
    const bool needs = g.requires_grad(x);
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        bwd = [x, id](Graph& gr) {
            const Tensor& gy = gr.grad(id);
            const auto y = gr.value(id).arr();
            gr.grad(x).arr() += gy.arr() * (1.0 - y * y);
        };
    }
    return g.add_node("tanh", {x}, std::move(out), std::move(bwd), needs);
}

NodeId sigmoid(Graph& g, NodeId x) {
    const Tensor& xv = g.value(x);
    Tensor out(xv.shape());
    for (Index i = 0; i < xv.size(); ++i) out[i] = stable_sigmoid(xv[i]);
    const bool needs = g.requires_grad(x);
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        bwd = [x, id](Graph& gr) {
            const Tensor& gy = gr.grad(id);
            const auto y = gr.value(id).arr();
            gr.grad(x).arr() += gy.arr() * y * (1.0 - y);
        };
    }
    return g.add_node("sigmoid", {x}, std::move(out), std::move(bwd), needs);
}

NodeId scale(Graph& g, NodeId x, double c) {
    const Tensor& xv = g.value(x);
    Tensor out(xv.shape());
    out.arr() = xv.arr() * c;
    const bool needs = g.requires_grad(x);
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        bwd = [x, c, id](Graph& gr) { gr.grad(x).arr() += gr.grad(id).arr() * c; };
    }
    return g.add_node("scale", {x}, std::move(out), std::move(bwd), needs);
}

NodeId sum_all(Graph& g, NodeId x) {
    const Tensor& xv = g.value(x);
    Tensor out = Tensor::scalar(xv.arr().sum());
    const bool needs = g.requires_grad(x);
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        bwd = [x, id](Graph& gr) { gr.grad(x).arr() += gr.grad(id)[0]; };
    }
    return g.add_node("sum_all", {x}, std::move(out), std::move(bwd), needs);
}

NodeId reshape(Graph& g, NodeId x, std::vector<Index> shape) {
    const Tensor& xv = g.value(x);
    Tensor out(std::move(shape));
    if (out.size() != xv.size())
        throw ShapeError("reshape: size mismatch " + xv.shape_str() + " -> " + out.shape_str());
    out.arr() = xv.arr();
    const bool needs = g.requires_grad(x);
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        bwd = [x, id](Graph& gr) { gr.grad(x).arr() += gr.grad(id).arr(); };
    }
    return g.add_node("reshape", {x}, std::move(out), std::move(bwd), needs);
}

NodeId concat_last_axis(Graph& g, NodeId a, NodeId b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    check_rank(av, 2, "concat_last_axis");
    check_rank(bv, 2, "concat_last_axis");
    if (av.dim(0) != bv.dim(0))
        throw ShapeError("concat_last_axis: row mismatch " + av.shape_str() + " vs " + bv.shape_str());
    const Index rows = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
    Tensor out({rows, ca + cb});
    out.mat().leftCols(ca) = av.mat();
    out.mat().rightCols(cb) = bv.mat();
    const bool needs = g.any_requires({a, b});
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        bwd = [a, b, ca, cb, id](Graph& gr) {
            const Tensor& gy = gr.grad(id);
            if (gr.requires_grad(a)) gr.grad(a).mat() += gy.mat().leftCols(ca);
            if (gr.requires_grad(b)) gr.grad(b).mat() += gy.mat().rightCols(cb);
        };
    }
    return g.add_node("concat_last_axis", {a, b}, std::move(out), std::move(bwd), needs);
}

NodeId slice_rows(Graph& g, NodeId x, Index begin, Index count) {
    const Tensor& xv = g.value(x);
    if (xv.rank() != 1 && xv.rank() != 2)
        throw ShapeError("slice_rows: expected rank-1/2 tensor, got " + xv.shape_str());
    const Index rows = xv.dim(0);
    if (begin < 0 || count < 1 || begin + count > rows)
        throw ContractError("slice_rows: range [" + std::to_string(begin) + ", " +
                            std::to_string(begin + count) + ") out of " + std::to_string(rows) + " rows");
    std::vector<Index> shape = xv.shape();
    shape[0] = count;
    Tensor out(std::move(shape));
    out.mat() = xv.mat().middleRows(begin, count);
    const bool needs = g.requires_grad(x);
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        bwd = [x, begin, count, id](Graph& gr) {
            gr.grad(x).mat().middleRows(begin, count) += gr.grad(id).mat();
        };
    }
    return g.add_node("slice_rows", {x}, std::move(out), std::move(bwd), needs);
}

namespace {

enum class Reduce { kMax, kMean, kMin };

NodeId reduce_time(Graph& g, NodeId x, Reduce kind, const char* name) {
    const Tensor& xv = g.value(x);
    check_rank(xv, 1, name);
    const Index n = xv.dim(0);
    Index arg = 0;
    double v = xv[0];
    if (kind == Reduce::kMean) {
        v = xv.arr().mean();
    } else {
        for (Index i = 1; i < n; ++i) {
            const bool better = kind == Reduce::kMax ? xv[i] > v : xv[i] < v;
            if (better) {
                v = xv[i];
                arg = i;
            }
        }
    }
    Tensor out = Tensor::scalar(v);
    const bool needs = g.requires_grad(x);
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        if (kind == Reduce::kMean) {
            bwd = [x, n, id](Graph& gr) { gr.grad(x).arr() += gr.grad(id)[0] / static_cast<double>(n); };
        } else {
            bwd = [x, arg, id](Graph& gr) { gr.grad(x)[arg] += gr.grad(id)[0]; };
        }
    }
    return g.add_node(name, {x}, std::move(out), std::move(bwd), needs);
}

} // namespace

NodeId reduce_max_time(Graph& g, NodeId x) { return reduce_time(g, x, Reduce::kMax, "reduce_max_time"); }
NodeId reduce_mean_time(Graph& g, NodeId x) { return reduce_time(g, x, Reduce::kMean, "reduce_mean_time"); }
NodeId reduce_min_time(Graph& g, NodeId x) { return reduce_time(g, x, Reduce::kMin, "reduce_min_time"); }

NodeId binary_cross_entropy(Graph& g, NodeId p, double target) {
    if (target < 0.0 || target > 1.0)
        throw ContractError("binary_cross_entropy: target outside [0,1]");
    const Tensor& pv = g.value(p);
    Tensor out(pv.shape());
    for (Index i = 0; i < pv.size(); ++i) {
        const double q = std::clamp(pv[i], kProbClamp, 1.0 - kProbClamp);
        out[i] = -(target * std::log(q) + (1.0 - target) * std::log(1.0 - q));
    }
    const bool needs = g.requires_grad(p);
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        bwd = [p, target, id](Graph& gr) {
            const Tensor& gy = gr.grad(id);
            const Tensor& pv2 = gr.value(p);
            Tensor& gp = gr.grad(p);
            for (Index i = 0; i < pv2.size(); ++i) {
                const double q = pv2[i];
                if (q <= kProbClamp || q >= 1.0 - kProbClamp) continue; // clamp active
                gp[i] += gy[i] * (-target / q + (1.0 - target) / (1.0 - q));
            }
        };
    }
    return g.add_node("binary_cross_entropy", {p}, std::move(out), std::move(bwd), needs);
}

NodeId squared_error(Graph& g, NodeId x, double target) {
    const Tensor& xv = g.value(x);
    Tensor out(xv.shape());
    out.arr() = 0.5 * (xv.arr() - target).square();
    const bool needs = g.requires_grad(x);
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        bwd = [x, target, id](Graph& gr) {
            gr.grad(x).arr() += gr.grad(id).arr() * (gr.value(x).arr() - target);
        };
    }
    return g.add_node("squared_error", {x}, std::move(out), std::move(bwd), needs);
}

NodeId mean_stack(Graph& g, const std::vector<NodeId>& scalars) {
    if (scalars.empty()) throw ContractError("mean_stack: no inputs");
    double acc = 0.0;
    for (NodeId s : scalars) acc += g.value(s).scalar_value();
    Tensor out = Tensor::scalar(acc / static_cast<double>(scalars.size()));
    const bool needs = g.any_requires(scalars);
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        const double inv = 1.0 / static_cast<double>(scalars.size());
        bwd = [scalars, inv, id](Graph& gr) {
            const double gy = gr.grad(id)[0] * inv;
            for (NodeId s : scalars) {
                if (gr.requires_grad(s)) gr.grad(s)[0] += gy;
            }
        };
    }
    return g.add_node("mean_stack", scalars, std::move(out), std::move(bwd), needs);
}

// -- conv2d_same --------------------------------------------------------------

NodeId conv2d_same(Graph& g, NodeId x, NodeId kernel) {
    const Tensor& xv = g.value(x);
    const Tensor& kv = g.value(kernel);
    check_rank(xv, 4, "conv2d_same");
    check_rank(kv, 4, "conv2d_same");
    const Index n = xv.dim(0), t_dim = xv.dim(1), f_dim = xv.dim(2), c_in = xv.dim(3);
    const Index kh = kv.dim(0), kw = kv.dim(1), c_out = kv.dim(3);
    if (kv.dim(2) != c_in)
        throw ShapeError("conv2d_same: kernel channels " + kv.shape_str() + " do not match input " +
                         xv.shape_str());
    if (kh % 2 == 0 || kw % 2 == 0) throw ContractError("conv2d_same: kernel dims must be odd");

    Tensor out({n, t_dim, f_dim, c_out});
    const Index plane = t_dim * f_dim;
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t lo, std::size_t hi) {
        RowMatrix shifted(plane, c_in);
        for (std::size_t bag = lo; bag < hi; ++bag) {
            ConstMatMap xm(xv.data() + static_cast<Index>(bag) * plane * c_in, plane, c_in);
            MatMap ym(out.data() + static_cast<Index>(bag) * plane * c_out, plane, c_out);
            ym.setZero();
            for (Index dy = 0; dy < kh; ++dy) {
                for (Index dx = 0; dx < kw; ++dx) {
                    build_shifted(xm, shifted, t_dim, f_dim, dy - kh / 2, dx - kw / 2);
                    ConstMatMap km(kv.data() + (dy * kw + dx) * c_in * c_out, c_in, c_out);
                    ym.noalias() += shifted * km;
                }
            }
        }
    });

    const bool needs = g.any_requires({x, kernel});
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        bwd = [x, kernel, n, t_dim, f_dim, c_in, c_out, kh, kw, plane, id](Graph& gr) {
            const Tensor& gy = gr.grad(id);
            const Tensor& xv2 = gr.value(x);
            const Tensor& kv2 = gr.value(kernel);
            const bool need_x = gr.requires_grad(x);
            const bool need_k = gr.requires_grad(kernel);
            // Per-bag kernel partials, reduced in bag order afterwards.
            Tensor k_partials;
            if (need_k) k_partials = Tensor::zeros({n, kh * kw * c_in * c_out});
            Tensor* gx = need_x ? &gr.grad(x) : nullptr;
            parallel_for(static_cast<std::size_t>(n), [&](std::size_t lo, std::size_t hi) {
                RowMatrix shifted(plane, c_in);
                RowMatrix dshift(plane, c_in);
                for (std::size_t bag = lo; bag < hi; ++bag) {
                    ConstMatMap xm(xv2.data() + static_cast<Index>(bag) * plane * c_in, plane, c_in);
                    ConstMatMap gym(gy.data() + static_cast<Index>(bag) * plane * c_out, plane, c_out);
                    for (Index dy = 0; dy < kh; ++dy) {
                        for (Index dx = 0; dx < kw; ++dx) {
                            const Index dt = dy - kh / 2, df = dx - kw / 2;
                            if (need_k) {
                                build_shifted(xm, shifted, t_dim, f_dim, dt, df);
                                MatMap kp(k_partials.data() + static_cast<Index>(bag) * kh * kw * c_in * c_out +
                                              (dy * kw + dx) * c_in * c_out,
                                          c_in, c_out);
                                kp.noalias() = shifted.transpose() * gym;
                            }
                            if (need_x) {
                                ConstMatMap km(kv2.data() + (dy * kw + dx) * c_in * c_out, c_in, c_out);
                                dshift.noalias() = gym * km.transpose();
                                MatMap gxm(gx->data() + static_cast<Index>(bag) * plane * c_in, plane, c_in);
                                scatter_shifted(dshift, gxm, t_dim, f_dim, dt, df);
                            }
                        }
                    }
                }
            });
            if (need_k) {
                Tensor& gk = gr.grad(kernel);
                for (Index bag = 0; bag < n; ++bag) {
                    gk.vec() += ConstVecMap(k_partials.data() + bag * gk.size(), gk.size());
                }
            }
        };
    }
    return g.add_node("conv2d_same", {x, kernel}, std::move(out), std::move(bwd), needs);
}

// -- batch_norm ---------------------------------------------------------------

NodeId batch_norm(Graph& g, NodeId x, NodeId gamma, NodeId beta, Tensor* running_mean,
                  Tensor* running_var, const std::vector<Index>& lengths, Mode mode, double eps,
                  double momentum) {
    const Tensor& xv = g.value(x);
    check_rank(xv, 4, "batch_norm");
    const Index n = xv.dim(0), t_dim = xv.dim(1), f_dim = xv.dim(2), c = xv.dim(3);
    const Tensor& gv = g.value(gamma);
    const Tensor& bv = g.value(beta);
    if (gv.rank() != 1 || gv.dim(0) != c || bv.rank() != 1 || bv.dim(0) != c)
        throw ShapeError("batch_norm: scale/shift must be [" + std::to_string(c) + "], got " +
                         gv.shape_str() + " and " + bv.shape_str());
    if (!lengths.empty() && static_cast<Index>(lengths.size()) != n)
        throw ContractError("batch_norm: lengths size does not match batch");

    std::vector<Index> valid(lengths.empty() ? std::vector<Index>(static_cast<std::size_t>(n), t_dim)
                                             : lengths);
    const Index plane = t_dim * f_dim;
    Index count = 0;
    for (Index v : valid) count += v * f_dim;
    if (count == 0) throw ContractError("batch_norm: no valid rows");

    auto mean = std::make_shared<Eigen::VectorXd>(c);
    auto inv_std = std::make_shared<Eigen::VectorXd>(c);
    if (mode == Mode::kTrain) {
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(c);
        Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(c);
        for (Index bag = 0; bag < n; ++bag) {
            ConstMatMap xm(xv.data() + bag * plane * c, plane, c);
            const auto block = xm.topRows(valid[static_cast<std::size_t>(bag)] * f_dim);
            sum += block.colwise().sum().transpose();
            sumsq += block.array().square().colwise().sum().matrix().transpose();
        }
        *mean = sum / static_cast<double>(count);
        Eigen::VectorXd var =
            (sumsq / static_cast<double>(count) - mean->array().square().matrix()).cwiseMax(0.0);
        inv_std->array() = 1.0 / (var.array() + eps).sqrt();
        if (running_mean && running_var) {
            running_mean->vec() = momentum * running_mean->vec() + (1.0 - momentum) * *mean;
            running_var->vec() = momentum * running_var->vec() + (1.0 - momentum) * var;
        }
    } else {
        if (!running_mean || !running_var)
            throw ContractError("batch_norm: inference requires running statistics");
        *mean = running_mean->vec();
        inv_std->array() = 1.0 / (running_var->vec().array() + eps).sqrt();
    }

    Tensor out(xv.shape());
    const Eigen::VectorXd scale_vec = gv.vec().array() * inv_std->array();
    const Eigen::VectorXd shift_vec =
        bv.vec().array() - mean->array() * scale_vec.array();
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t bag = lo; bag < hi; ++bag) {
            ConstMatMap xm(xv.data() + static_cast<Index>(bag) * plane * c, plane, c);
            MatMap ym(out.data() + static_cast<Index>(bag) * plane * c, plane, c);
            const Index rows = valid[bag] * f_dim;
            ym.topRows(rows) =
                (xm.topRows(rows) * scale_vec.asDiagonal()).rowwise() + shift_vec.transpose();
            if (rows < plane) ym.bottomRows(plane - rows).setZero();
        }
    });

    const bool needs = g.any_requires({x, gamma, beta});
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        const bool train = mode == Mode::kTrain;
        bwd = [x, gamma, beta, n, plane, f_dim, c, valid, count, mean, inv_std, train, id](Graph& gr) {
            const Tensor& gy = gr.grad(id);
            const Tensor& xv2 = gr.value(x);
            const Tensor& gv2 = gr.value(gamma);
            const double m = static_cast<double>(count);
            // Channel sums of gy and gy*xhat over valid rows, bag order.
            Eigen::VectorXd s1 = Eigen::VectorXd::Zero(c);
            Eigen::VectorXd s2 = Eigen::VectorXd::Zero(c);
            for (Index bag = 0; bag < n; ++bag) {
                ConstMatMap gym(gy.data() + bag * plane * c, plane, c);
                ConstMatMap xm(xv2.data() + bag * plane * c, plane, c);
                const Index rows = valid[static_cast<std::size_t>(bag)] * f_dim;
                s1 += gym.topRows(rows).colwise().sum().transpose();
                RowMatrix xhat = xm.topRows(rows);
                xhat.rowwise() -= mean->transpose();
                xhat *= inv_std->asDiagonal();
                s2 += (gym.topRows(rows).array() * xhat.array()).colwise().sum().matrix().transpose();
            }
            if (gr.requires_grad(beta)) gr.grad(beta).vec() += s1;
            if (gr.requires_grad(gamma)) gr.grad(gamma).vec() += s2;
            if (gr.requires_grad(x)) {
                Tensor& gx = gr.grad(x);
                const Eigen::VectorXd gs = gv2.vec().array() * inv_std->array();
                const Eigen::VectorXd s1m = s1 / m;
                const Eigen::VectorXd s2m = s2 / m;
                parallel_for(static_cast<std::size_t>(n), [&](std::size_t lo, std::size_t hi) {
                    for (std::size_t bag = lo; bag < hi; ++bag) {
                        ConstMatMap gym(gy.data() + static_cast<Index>(bag) * plane * c, plane, c);
                        ConstMatMap xm(xv2.data() + static_cast<Index>(bag) * plane * c, plane, c);
                        MatMap gxm(gx.data() + static_cast<Index>(bag) * plane * c, plane, c);
                        const Index rows = valid[bag] * f_dim;
                        if (train) {
                            RowMatrix xhat = xm.topRows(rows);
                            xhat.rowwise() -= mean->transpose();
                            xhat *= inv_std->asDiagonal();
                            RowMatrix tmp = gym.topRows(rows);
                            tmp.rowwise() -= s1m.transpose();
                            tmp.array() -= xhat.array().rowwise() * s2m.transpose().array();
                            gxm.topRows(rows).array() += tmp.array().rowwise() * gs.transpose().array();
                        } else {
                            gxm.topRows(rows).array() +=
                                gym.topRows(rows).array().rowwise() * gs.transpose().array();
                        }
                    }
                });
            }
        };
    }
    return g.add_node("batch_norm", {x, gamma, beta}, std::move(out), std::move(bwd), needs);
}

// -- max_pool_freq ------------------------------------------------------------

NodeId max_pool_freq(Graph& g, NodeId x, Index k) {
    const Tensor& xv = g.value(x);
    check_rank(xv, 4, "max_pool_freq");
    const Index n = xv.dim(0), t_dim = xv.dim(1), f_dim = xv.dim(2), c = xv.dim(3);
    if (k < 1 || f_dim < k)
        throw ShapeError("max_pool_freq: pool " + std::to_string(k) + " too large for " + xv.shape_str());
    const Index f_out = f_dim / k;
    Tensor out({n, t_dim, f_out, c});
    auto argmax = std::make_shared<std::vector<std::int32_t>>(
        static_cast<std::size_t>(n * t_dim * f_out * c));
    parallel_for(static_cast<std::size_t>(n * t_dim), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t nt = lo; nt < hi; ++nt) {
            const double* src = xv.data() + static_cast<Index>(nt) * f_dim * c;
            double* dst = out.data() + static_cast<Index>(nt) * f_out * c;
            std::int32_t* am = argmax->data() + static_cast<Index>(nt) * f_out * c;
            for (Index fo = 0; fo < f_out; ++fo) {
                const double* win = src + fo * k * c;
                for (Index ch = 0; ch < c; ++ch) {
                    double best = win[ch];
                    std::int32_t bj = 0;
                    for (Index j = 1; j < k; ++j) {
                        const double v = win[j * c + ch];
                        if (v > best) {
                            best = v;
                            bj = static_cast<std::int32_t>(j);
                        }
                    }
                    dst[fo * c + ch] = best;
                    am[fo * c + ch] = bj;
                }
            }
        }
    });
    const bool needs = g.requires_grad(x);
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        bwd = [x, n, t_dim, f_dim, f_out, c, k, argmax, id](Graph& gr) {
            const Tensor& gy = gr.grad(id);
            Tensor& gx = gr.grad(x);
            parallel_for(static_cast<std::size_t>(n * t_dim), [&](std::size_t lo, std::size_t hi) {
                for (std::size_t nt = lo; nt < hi; ++nt) {
                    const double* gsrc = gy.data() + static_cast<Index>(nt) * f_out * c;
                    double* gdst = gx.data() + static_cast<Index>(nt) * f_dim * c;
                    const std::int32_t* am = argmax->data() + static_cast<Index>(nt) * f_out * c;
                    for (Index fo = 0; fo < f_out; ++fo) {
                        for (Index ch = 0; ch < c; ++ch) {
                            gdst[(fo * k + am[fo * c + ch]) * c + ch] += gsrc[fo * c + ch];
                        }
                    }
                }
            });
        };
    }
    return g.add_node("max_pool_freq", {x}, std::move(out), std::move(bwd), needs);
}

// -- to_sequences -------------------------------------------------------------

NodeId to_sequences(Graph& g, NodeId x, const std::vector<Index>& lengths) {
    const Tensor& xv = g.value(x);
    check_rank(xv, 4, "to_sequences");
    const Index n = xv.dim(0), t_dim = xv.dim(1), f_dim = xv.dim(2), c = xv.dim(3);
    if (f_dim != 1) throw ShapeError("to_sequences: frequency axis must be pooled to 1, got " + xv.shape_str());
    if (static_cast<Index>(lengths.size()) != n)
        throw ContractError("to_sequences: lengths size does not match batch");
    const auto off = ragged_offsets(lengths);
    const Index total = off.back();
    Tensor out({total, c});
    for (Index bag = 0; bag < n; ++bag) {
        const Index len = lengths[static_cast<std::size_t>(bag)];
        if (len < 1 || len > t_dim) throw ContractError("to_sequences: invalid length");
        out.mat().middleRows(off[static_cast<std::size_t>(bag)], len) =
            ConstMatMap(xv.data() + bag * t_dim * c, t_dim, c).topRows(len);
    }
    const bool needs = g.requires_grad(x);
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        bwd = [x, n, t_dim, c, lengths, off, id](Graph& gr) {
            const Tensor& gy = gr.grad(id);
            Tensor& gx = gr.grad(x);
            for (Index bag = 0; bag < n; ++bag) {
                const Index len = lengths[static_cast<std::size_t>(bag)];
                MatMap(gx.data() + bag * t_dim * c, t_dim, c).topRows(len) +=
                    gy.mat().middleRows(off[static_cast<std::size_t>(bag)], len);
            }
        };
    }
    return g.add_node("to_sequences", {x}, std::move(out), std::move(bwd), needs);
}

// -- gru_sequence -------------------------------------------------------------

namespace {

struct GruCache {
    RowMatrix z, r, c; // gate activations per ragged row
};

} // namespace

NodeId gru_sequence(Graph& g, NodeId x, NodeId w, NodeId u, NodeId b,
                    const std::vector<Index>& lengths, bool reverse) {
    const Tensor& xv = g.value(x);
    const Tensor& wv = g.value(w);
    const Tensor& uv = g.value(u);
    const Tensor& bv = g.value(b);
    check_rank(xv, 2, "gru_sequence");
    check_rank(wv, 2, "gru_sequence");
    check_rank(uv, 2, "gru_sequence");
    check_rank(bv, 1, "gru_sequence");
    const Index in_dim = xv.dim(1);
    const Index h = uv.dim(0);
    if (wv.dim(0) != in_dim || wv.dim(1) != 3 * h || uv.dim(1) != 3 * h || bv.dim(0) != 3 * h)
        throw ShapeError("gru_sequence: parameter shapes " + wv.shape_str() + ", " + uv.shape_str() +
                         ", " + bv.shape_str() + " inconsistent with input " + xv.shape_str());
    const auto off = ragged_offsets(lengths);
    if (off.back() != xv.dim(0))
        throw ContractError("gru_sequence: lengths sum " + std::to_string(off.back()) +
                            " does not match rows " + std::to_string(xv.dim(0)));

    const Index total = xv.dim(0);
    // Input projection for every frame in one pass; gates ordered z|r|c.
    RowMatrix xw = xv.mat() * wv.mat();
    xw.rowwise() += bv.vec().transpose();

    auto cache = std::make_shared<GruCache>();
    cache->z.resize(total, h);
    cache->r.resize(total, h);
    cache->c.resize(total, h);
    Tensor out({total, h});
    MatMap ym = out.mat();

    const auto uzr = uv.mat().leftCols(2 * h);
    const auto uh = uv.mat().rightCols(h);
    parallel_for(lengths.size(), [&](std::size_t lo, std::size_t hi) {
        Eigen::RowVectorXd hprev(h), szr(2 * h), sc(h), rh(h);
        for (std::size_t bag = lo; bag < hi; ++bag) {
            const Index base = off[bag];
            const Index len = lengths[bag];
            hprev.setZero();
            for (Index s = 0; s < len; ++s) {
                const Index row = base + (reverse ? len - 1 - s : s);
                szr.noalias() = hprev * uzr;
                szr += xw.row(row).head(2 * h);
                for (Index i = 0; i < 2 * h; ++i) szr(i) = stable_sigmoid(szr(i));
                const auto zrow = szr.head(h);
                const auto rrow = szr.tail(h);
                rh = rrow.cwiseProduct(hprev);
                sc.noalias() = rh * uh;
                sc += xw.row(row).tail(h);
                sc = sc.array().tanh();
                cache->z.row(row) = zrow;
                cache->r.row(row) = rrow;
                cache->c.row(row) = sc;
                ym.row(row) = zrow.cwiseProduct(hprev) + (1.0 - zrow.array()).matrix().cwiseProduct(sc);
                hprev = ym.row(row);
            }
        }
    });

    const bool needs = g.any_requires({x, w, u, b});
    const NodeId id = g.next_id();
    std::function<void(Graph&)> bwd;
    if (needs) {
        bwd = [x, w, u, b, lengths, off, reverse, h, total, cache, id](Graph& gr) {
            const Tensor& gy = gr.grad(id);
            const Tensor& yv = gr.value(id);
            const Tensor& uv2 = gr.value(u);
            const auto uzr2 = uv2.mat().leftCols(2 * h);
            const auto uh2 = uv2.mat().rightCols(h);
            RowMatrix dxw = RowMatrix::Zero(total, 3 * h);
            const Index n_bags = static_cast<Index>(lengths.size());
            // Per-bag recurrent-weight partials, reduced in bag order below.
            std::vector<RowMatrix> du_part(static_cast<std::size_t>(n_bags));
            parallel_for(lengths.size(), [&](std::size_t lo, std::size_t hi) {
                Eigen::RowVectorXd dh(h), dz(h), dzpre(h), dc(h), dcpre(h), drh(h), drpre(h), hprev(h);
                Eigen::RowVectorXd dzr(2 * h);
                for (std::size_t bag = lo; bag < hi; ++bag) {
                    RowMatrix& dup = du_part[bag];
                    dup = RowMatrix::Zero(h, 3 * h);
                    const Index base = off[bag];
                    const Index len = lengths[bag];
                    dh.setZero();
                    for (Index s = len - 1; s >= 0; --s) {
                        const Index row = base + (reverse ? len - 1 - s : s);
                        if (s == 0) {
                            hprev.setZero();
                        } else {
                            hprev = yv.mat().row(base + (reverse ? len - s : s - 1));
                        }
                        dh += gy.mat().row(row);
                        const auto z = cache->z.row(row);
                        const auto r = cache->r.row(row);
                        const auto c = cache->c.row(row);
                        dz = dh.cwiseProduct(hprev - c);
                        dzpre = dz.array() * z.array() * (1.0 - z.array());
                        dc = dh.array() * (1.0 - z.array());
                        dcpre = dc.array() * (1.0 - c.array().square());
                        drh.noalias() = dcpre * uh2.transpose();
                        dup.rightCols(h).noalias() += r.cwiseProduct(hprev).transpose() * dcpre;
                        drpre = drh.cwiseProduct(hprev).array() * r.array() * (1.0 - r.array());
                        dzr << dzpre, drpre;
                        dxw.row(row).head(2 * h) = dzr;
                        dxw.row(row).tail(h) = dcpre;
                        dup.leftCols(2 * h).noalias() += hprev.transpose() * dzr;
                        // carry to the previous step
                        dh = dh.cwiseProduct(z) + drh.cwiseProduct(r);
                        dh.noalias() += dzr * uzr2.transpose();
                    }
                }
            });
            if (gr.requires_grad(u)) {
                Tensor& gu = gr.grad(u);
                for (Index bag = 0; bag < n_bags; ++bag)
                    gu.mat() += du_part[static_cast<std::size_t>(bag)];
            }
            if (gr.requires_grad(b)) gr.grad(b).vec() += dxw.colwise().sum().transpose();
            if (gr.requires_grad(w))
                gr.grad(w).mat().noalias() += gr.value(x).mat().transpose() * dxw;
            if (gr.requires_grad(x)) gr.grad(x).mat().noalias() += dxw * gr.value(w).mat().transpose();
        };
    }
    return g.add_node("gru_sequence", {x, w, u, b}, std::move(out), std::move(bwd), needs);
}

} // namespace wsed
