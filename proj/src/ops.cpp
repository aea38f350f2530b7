#include "atlas/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace atlas::nn {

namespace {

bool taped(std::initializer_list<const Tensor*> ins) {
    if (!Tape::active()) return false;
    for (const Tensor* t : ins) {
        if (t->requires_grad()) return true;
    }
    return false;
}

void check(bool cond, const char* msg) {
    if (!cond) throw std::runtime_error(msg);
}

Tensor unary_ew(const Tensor& x, double (*f)(double), double (*df)(double, double)) {
    // df(x, y) where y = f(x)
    Tensor out = Tensor::zeros(x.shape(), taped({&x}));
    const double* xd = x.data();
    double* od = out.data();
    const int n = x.size();
    for (int i = 0; i < n; i++) od[i] = f(xd[i]);
    if (out.requires_grad()) {
        Tape::active()->record([x, out, df]() {
            const double* go = out.grad();
            const double* xd = x.data();
            const double* od = out.data();
            double* gx = x.grad();
            const int n = x.size();
            for (int i = 0; i < n; i++) gx[i] += go[i] * df(xd[i], od[i]);
        });
    }
    return out;
}

}  // namespace

Tensor relu(const Tensor& x) {
    return unary_ew(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_ew(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
    return unary_ew(
        x, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor add(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "add: shape mismatch");
    Tensor out = Tensor::zeros(a.shape(), taped({&a, &b}));
    const int n = a.size();
    for (int i = 0; i < n; i++) out.data()[i] = a.data()[i] + b.data()[i];
    if (out.requires_grad()) {
        Tape::active()->record([a, b, out]() {
            const double* go = out.grad();
            const int n = out.size();
            if (a.requires_grad()) {
                for (int i = 0; i < n; i++) a.grad()[i] += go[i];
            }
            if (b.requires_grad()) {
                for (int i = 0; i < n; i++) b.grad()[i] += go[i];
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "sub: shape mismatch");
    Tensor out = Tensor::zeros(a.shape(), taped({&a, &b}));
    const int n = a.size();
    for (int i = 0; i < n; i++) out.data()[i] = a.data()[i] - b.data()[i];
    if (out.requires_grad()) {
        Tape::active()->record([a, b, out]() {
            const double* go = out.grad();
            const int n = out.size();
            if (a.requires_grad()) {
                for (int i = 0; i < n; i++) a.grad()[i] += go[i];
            }
            if (b.requires_grad()) {
                for (int i = 0; i < n; i++) b.grad()[i] -= go[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "mul: shape mismatch");
    Tensor out = Tensor::zeros(a.shape(), taped({&a, &b}));
    const int n = a.size();
    for (int i = 0; i < n; i++) out.data()[i] = a.data()[i] * b.data()[i];
    if (out.requires_grad()) {
        Tape::active()->record([a, b, out]() {
            const double* go = out.grad();
            const int n = out.size();
            if (a.requires_grad()) {
                for (int i = 0; i < n; i++) a.grad()[i] += go[i] * b.data()[i];
            }
            if (b.requires_grad()) {
                for (int i = 0; i < n; i++) b.grad()[i] += go[i] * a.data()[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape(), taped({&x}));
    const int n = x.size();
    for (int i = 0; i < n; i++) out.data()[i] = c * x.data()[i];
    if (out.requires_grad()) {
        Tape::active()->record([x, out, c]() {
            const double* go = out.grad();
            const int n = x.size();
            for (int i = 0; i < n; i++) x.grad()[i] += c * go[i];
        });
    }
    return out;
}

Tensor affine_const(const Tensor& x, std::vector<double> mul, std::vector<double> add) {
    check(static_cast<int>(mul.size()) == x.size() && mul.size() == add.size(),
          "affine_const: coefficient length mismatch");
    Tensor out = Tensor::zeros(x.shape(), taped({&x}));
    const int n = x.size();
    for (int i = 0; i < n; i++) out.data()[i] = mul[i] * x.data()[i] + add[i];
    if (out.requires_grad()) {
        Tape::active()->record([x, out, mul = std::move(mul)]() {
            const double* go = out.grad();
            const int n = x.size();
            for (int i = 0; i < n; i++) x.grad()[i] += mul[i] * go[i];
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    Tensor out = Tensor::zeros({1}, taped({&x}));
    double s = 0.0;
    for (int i = 0; i < x.size(); i++) s += x.data()[i];
    out.data()[0] = s;
    if (out.requires_grad()) {
        Tape::active()->record([x, out]() {
            const double g = out.grad()[0];
            for (int i = 0; i < x.size(); i++) x.grad()[i] += g;
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
    Tensor out = Tensor::zeros(std::move(shape), taped({&x}));
    check(out.size() == x.size(), "reshape: element count mismatch");
    std::memcpy(out.data(), x.data(), sizeof(double) * x.size());
    if (out.requires_grad()) {
        Tape::active()->record([x, out]() {
            const double* go = out.grad();
            for (int i = 0; i < x.size(); i++) x.grad()[i] += go[i];
        });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    check(x.ndim() == 2 && w.ndim() == 2 && b.ndim() == 1, "linear: bad ranks");
    const int n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    check(w.dim(1) == in && b.dim(0) == out_dim, "linear: shape mismatch");
    Tensor out = Tensor::zeros({n, out_dim}, taped({&x, &w, &b}));
    const double* xd = x.data();
    const double* wd = w.data();
    const double* bd = b.data();
    double* od = out.data();
    for (int r = 0; r < n; r++) {
        const double* xr = xd + static_cast<std::size_t>(r) * in;
        double* orow = od + static_cast<std::size_t>(r) * out_dim;
        for (int o = 0; o < out_dim; o++) {
            const double* wr = wd + static_cast<std::size_t>(o) * in;
            double acc = bd[o];
            for (int i = 0; i < in; i++) acc += xr[i] * wr[i];
            orow[o] = acc;
        }
    }
    if (out.requires_grad()) {
        Tape::active()->record([x, w, b, out]() {
            const int n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
            const double* go = out.grad();
            if (x.requires_grad()) {
                double* gx = x.grad();
                const double* wd = w.data();
                for (int r = 0; r < n; r++) {
                    const double* gr = go + static_cast<std::size_t>(r) * out_dim;
                    double* gxr = gx + static_cast<std::size_t>(r) * in;
                    for (int o = 0; o < out_dim; o++) {
                        const double g = gr[o];
                        const double* wr = wd + static_cast<std::size_t>(o) * in;
                        for (int i = 0; i < in; i++) gxr[i] += g * wr[i];
                    }
                }
            }
            if (w.requires_grad()) {
                double* gw = w.grad();
                const double* xd = x.data();
                for (int r = 0; r < n; r++) {
                    const double* gr = go + static_cast<std::size_t>(r) * out_dim;
                    const double* xr = xd + static_cast<std::size_t>(r) * in;
                    for (int o = 0; o < out_dim; o++) {
                        const double g = gr[o];
                        double* gwr = gw + static_cast<std::size_t>(o) * in;
                        for (int i = 0; i < in; i++) gwr[i] += g * xr[i];
                    }
                }
            }
            if (b.requires_grad()) {
                double* gb = b.grad();
                for (int r = 0; r < n; r++) {
                    const double* gr = go + static_cast<std::size_t>(r) * out_dim;
                    for (int o = 0; o < out_dim; o++) gb[o] += gr[o];
                }
            }
        });
    }
    return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    check(a.ndim() == 2 && b.ndim() == 2 && a.dim(0) == b.dim(0), "concat_cols: shape mismatch");
    const int n = a.dim(0), p = a.dim(1), q = b.dim(1);
    Tensor out = Tensor::zeros({n, p + q}, taped({&a, &b}));
    for (int r = 0; r < n; r++) {
        std::memcpy(out.data() + static_cast<std::size_t>(r) * (p + q),
                    a.data() + static_cast<std::size_t>(r) * p, sizeof(double) * p);
        std::memcpy(out.data() + static_cast<std::size_t>(r) * (p + q) + p,
                    b.data() + static_cast<std::size_t>(r) * q, sizeof(double) * q);
    }
    if (out.requires_grad()) {
        Tape::active()->record([a, b, out]() {
            const int n = a.dim(0), p = a.dim(1), q = b.dim(1);
            const double* go = out.grad();
            for (int r = 0; r < n; r++) {
                const double* grow = go + static_cast<std::size_t>(r) * (p + q);
                if (a.requires_grad()) {
                    double* ga = a.grad() + static_cast<std::size_t>(r) * p;
                    for (int i = 0; i < p; i++) ga[i] += grow[i];
                }
                if (b.requires_grad()) {
                    double* gb = b.grad() + static_cast<std::size_t>(r) * q;
                    for (int i = 0; i < q; i++) gb[i] += grow[p + i];
                }
            }
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& index) {
    check(x.ndim() == 2, "gather_rows: rank-2 input required");
    const int d = x.dim(1);
    const int m = static_cast<int>(index.size());
    for (int r : index) check(r >= 0 && r < x.dim(0), "gather_rows: index out of range");
    Tensor out = Tensor::zeros({m, d}, taped({&x}));
    for (int r = 0; r < m; r++) {
        std::memcpy(out.data() + static_cast<std::size_t>(r) * d,
                    x.data() + static_cast<std::size_t>(index[r]) * d, sizeof(double) * d);
    }
    if (out.requires_grad()) {
        Tape::active()->record([x, out, index]() {
            const int d = x.dim(1);
            const double* go = out.grad();
            double* gx = x.grad();
            for (std::size_t r = 0; r < index.size(); r++) {
                const double* grow = go + r * d;
                double* gxr = gx + static_cast<std::size_t>(index[r]) * d;
                for (int i = 0; i < d; i++) gxr[i] += grow[i];
            }
        });
    }
    return out;
}

Tensor gather_cells(const Tensor& grid, const std::vector<int>& cells) {
    check(grid.ndim() == 3, "gather_cells: rank-3 grid required");
    const int C = grid.dim(0);
    const int plane = grid.dim(1) * grid.dim(2);
    const int m = static_cast<int>(cells.size());
    for (int c : cells) check(c >= 0 && c < plane, "gather_cells: cell out of range");
    Tensor out = Tensor::zeros({m, C}, taped({&grid}));
    for (int r = 0; r < m; r++) {
        for (int c = 0; c < C; c++) {
            out.data()[static_cast<std::size_t>(r) * C + c] =
                grid.data()[static_cast<std::size_t>(c) * plane + cells[r]];
        }
    }
    if (out.requires_grad()) {
        Tape::active()->record([grid, out, cells]() {
            const int C = grid.dim(0);
            const int plane = grid.dim(1) * grid.dim(2);
            const double* go = out.grad();
            double* gg = grid.grad();
            for (std::size_t r = 0; r < cells.size(); r++) {
                for (int c = 0; c < C; c++) {
                    gg[static_cast<std::size_t>(c) * plane + cells[r]] += go[r * C + c];
                }
            }
        });
    }
    return out;
}

Tensor chw_to_hwc(const Tensor& x) {
    check(x.ndim() == 3, "chw_to_hwc: rank-3 input required");
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor out = Tensor::zeros({H, W, C}, taped({&x}));
    for (int c = 0; c < C; c++) {
        for (int p = 0; p < H * W; p++) {
            out.data()[static_cast<std::size_t>(p) * C + c] =
                x.data()[static_cast<std::size_t>(c) * H * W + p];
        }
    }
    if (out.requires_grad()) {
        Tape::active()->record([x, out]() {
            const int C = x.dim(0), HW = x.dim(1) * x.dim(2);
            const double* go = out.grad();
            double* gx = x.grad();
            for (int c = 0; c < C; c++) {
                for (int p = 0; p < HW; p++) {
                    gx[static_cast<std::size_t>(c) * HW + p] +=
                        go[static_cast<std::size_t>(p) * C + c];
                }
            }
        });
    }
    return out;
}

Tensor crop2d(const Tensor& x, int new_h, int new_w) {
    check(x.ndim() == 3, "crop2d: rank-3 input required");
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    check(new_h >= 1 && new_h <= H && new_w >= 1 && new_w <= W, "crop2d: bad extents");
    Tensor out = Tensor::zeros({C, new_h, new_w}, taped({&x}));
    for (int c = 0; c < C; c++) {
        for (int y = 0; y < new_h; y++) {
            std::memcpy(out.data() + (static_cast<std::size_t>(c) * new_h + y) * new_w,
                        x.data() + (static_cast<std::size_t>(c) * H + y) * W,
                        sizeof(double) * new_w);
        }
    }
    if (out.requires_grad()) {
        Tape::active()->record([x, out]() {
            const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
            const int nh = out.dim(1), nw = out.dim(2);
            (void)H;
            const double* go = out.grad();
            double* gx = x.grad();
            for (int c = 0; c < C; c++) {
                for (int y = 0; y < nh; y++) {
                    const double* src = go + (static_cast<std::size_t>(c) * nh + y) * nw;
                    double* dst = gx + (static_cast<std::size_t>(c) * H + y) * W;
                    for (int xx = 0; xx < nw; xx++) dst[xx] += src[xx];
                }
            }
        });
    }
    return out;
}

Tensor bilinear_pairs(const Tensor& x, const Tensor& w,
                      const std::vector<std::pair<int, int>>& pairs) {
    check(x.ndim() == 2 && w.ndim() == 2, "bilinear_pairs: bad ranks");
    const int d = x.dim(1);
    check(w.dim(0) == d && w.dim(1) == d, "bilinear_pairs: weight must be [d, d]");
    const int m = static_cast<int>(pairs.size());
    check(m > 0, "bilinear_pairs: empty pair list");
    for (const auto& [i, j] : pairs) {
        check(i >= 0 && i < x.dim(0) && j >= 0 && j < x.dim(0),
              "bilinear_pairs: pair index out of range");
    }
    Tensor out = Tensor::zeros({m}, taped({&x, &w}));
    const double* xd = x.data();
    const double* wd = w.data();
    std::vector<double> tmp(d);
    for (int r = 0; r < m; r++) {
        const double* xi = xd + static_cast<std::size_t>(pairs[r].first) * d;
        const double* xj = xd + static_cast<std::size_t>(pairs[r].second) * d;
        double acc = 0.0;
        for (int a = 0; a < d; a++) {
            const double* wr = wd + static_cast<std::size_t>(a) * d;
            double dot = 0.0;
            for (int b = 0; b < d; b++) dot += wr[b] * xj[b];
            acc += xi[a] * dot;
        }
        out.data()[r] = acc;
    }
    if (out.requires_grad()) {
        Tape::active()->record([x, w, out, pairs]() {
            const int d = x.dim(1);
            const double* xd = x.data();
            const double* wd = w.data();
            const double* go = out.grad();
            for (std::size_t r = 0; r < pairs.size(); r++) {
                const double g = go[r];
                if (g == 0.0) continue;
                const double* xi = xd + static_cast<std::size_t>(pairs[r].first) * d;
                const double* xj = xd + static_cast<std::size_t>(pairs[r].second) * d;
                if (x.requires_grad()) {
                    double* gi = x.grad() + static_cast<std::size_t>(pairs[r].first) * d;
                    double* gj = x.grad() + static_cast<std::size_t>(pairs[r].second) * d;
                    for (int a = 0; a < d; a++) {
                        const double* wr = wd + static_cast<std::size_t>(a) * d;
                        double dot = 0.0;
                        for (int b = 0; b < d; b++) dot += wr[b] * xj[b];
                        gi[a] += g * dot;
                    }
                    for (int b = 0; b < d; b++) {
                        double dot = 0.0;
                        for (int a = 0; a < d; a++) dot += xi[a] * wd[static_cast<std::size_t>(a) * d + b];
                        gj[b] += g * dot;
                    }
                }
                if (w.requires_grad()) {
                    double* gw = w.grad();
                    for (int a = 0; a < d; a++) {
                        const double xia = g * xi[a];
                        double* gwr = gw + static_cast<std::size_t>(a) * d;
                        for (int b = 0; b < d; b++) gwr[b] += xia * xj[b];
                    }
                }
            }
        });
    }
    return out;
}

namespace {

// Patch matrix for im2col convolution, laid out [Q, P]: row q is one
// (ci, ky, kx) tap across all P output pixels. Everything downstream then
// streams contiguous P-length rows.
std::vector<double> im2col(const double* x, int Ci, int H, int W, int k, int stride, int pad,
                           int Ho, int Wo) {
    const std::size_t P = static_cast<std::size_t>(Ho) * Wo;
    std::vector<double> cols(static_cast<std::size_t>(Ci) * k * k * P, 0.0);
    for (int ci = 0; ci < Ci; ci++) {
        const double* plane = x + static_cast<std::size_t>(ci) * H * W;
        for (int ky = 0; ky < k; ky++) {
            for (int kx = 0; kx < k; kx++) {
                const int q = (ci * k + ky) * k + kx;
                double* qrow = cols.data() + static_cast<std::size_t>(q) * P;
                for (int oy = 0; oy < Ho; oy++) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    const double* src = plane + static_cast<std::size_t>(iy) * W;
                    double* dst = qrow + static_cast<std::size_t>(oy) * Wo;
                    const int x0 = std::max(0, (pad - kx + stride - 1) / stride);
                    const int x1 = std::min(Wo - 1, (W - 1 + pad - kx) / stride);
                    if (stride == 1) {
                        for (int ox = x0; ox <= x1; ox++) dst[ox] = src[ox + kx - pad];
                    } else {
                        for (int ox = x0; ox <= x1; ox++) dst[ox] = src[ox * stride + kx - pad];
                    }
                }
            }
        }
    }
    return cols;
}

void col2im_add(const std::vector<double>& cols, double* gx, int Ci, int H, int W, int k,
                int stride, int pad, int Ho, int Wo) {
    const std::size_t P = static_cast<std::size_t>(Ho) * Wo;
    for (int ci = 0; ci < Ci; ci++) {
        double* plane = gx + static_cast<std::size_t>(ci) * H * W;
        for (int ky = 0; ky < k; ky++) {
            for (int kx = 0; kx < k; kx++) {
                const int q = (ci * k + ky) * k + kx;
                const double* qrow = cols.data() + static_cast<std::size_t>(q) * P;
                for (int oy = 0; oy < Ho; oy++) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    const double* src = qrow + static_cast<std::size_t>(oy) * Wo;
                    double* dst = plane + static_cast<std::size_t>(iy) * W;
                    const int x0 = std::max(0, (pad - kx + stride - 1) / stride);
                    const int x1 = std::min(Wo - 1, (W - 1 + pad - kx) / stride);
                    if (stride == 1) {
                        for (int ox = x0; ox <= x1; ox++) dst[ox + kx - pad] += src[ox];
                    } else {
                        for (int ox = x0; ox <= x1; ox++) dst[ox * stride + kx - pad] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    check(x.ndim() == 3 && w.ndim() == 4 && b.ndim() == 1, "conv2d: bad ranks");
    const int Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int Co = w.dim(0), k = w.dim(2);
    check(w.dim(1) == Ci && w.dim(3) == k, "conv2d: weight shape mismatch");
    check(b.dim(0) == Co, "conv2d: bias shape mismatch");
    check(k % 2 == 1, "conv2d: kernel size must be odd");
    check(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    check((H + 2 * pad - k) % stride == 0 && (W + 2 * pad - k) % stride == 0,
          "conv2d: output extent is not integral");
    const int Ho = (H + 2 * pad - k) / stride + 1;
    const int Wo = (W + 2 * pad - k) / stride + 1;
    const int P = Ho * Wo;
    const int Q = Ci * k * k;

    const std::vector<double> cols = im2col(x.data(), Ci, H, W, k, stride, pad, Ho, Wo);
    Tensor out = Tensor::zeros({Co, Ho, Wo}, taped({&x, &w, &b}));
    double* od = out.data();
    const double* wd = w.data();
    for (int co = 0; co < Co; co++) {
        double* orow = od + static_cast<std::size_t>(co) * P;
        const double bias = b.data()[co];
        for (int p = 0; p < P; p++) orow[p] = bias;
        const double* wrow = wd + static_cast<std::size_t>(co) * Q;
        for (int q = 0; q < Q; q++) {
            const double wv = wrow[q];
            if (wv == 0.0) continue;
            const double* qrow = cols.data() + static_cast<std::size_t>(q) * P;
            for (int p = 0; p < P; p++) orow[p] += wv * qrow[p];
        }
    }

    if (out.requires_grad()) {
        Tape::active()->record([x, w, b, out, stride, pad]() {
            const int Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
            const int Co = w.dim(0), k = w.dim(2);
            const int Ho = out.dim(1), Wo = out.dim(2);
            const int P = Ho * Wo;
            const int Q = Ci * k * k;
            const double* go = out.grad();

            if (b.requires_grad()) {
                double* gb = b.grad();
                for (int co = 0; co < Co; co++) {
                    const double* plane = go + static_cast<std::size_t>(co) * P;
                    double acc = 0.0;
                    for (int p = 0; p < P; p++) acc += plane[p];
                    gb[co] += acc;
                }
            }
            if (w.requires_grad()) {
                const std::vector<double> cols =
                    im2col(x.data(), Ci, H, W, k, stride, pad, Ho, Wo);
                double* gw = w.grad();
                for (int co = 0; co < Co; co++) {
                    const double* grow = go + static_cast<std::size_t>(co) * P;
                    double* gwrow = gw + static_cast<std::size_t>(co) * Q;
                    for (int q = 0; q < Q; q++) {
                        const double* qrow = cols.data() + static_cast<std::size_t>(q) * P;
                        double acc = 0.0;
                        for (int p = 0; p < P; p++) acc += grow[p] * qrow[p];
                        gwrow[q] += acc;
                    }
                }
            }
            if (x.requires_grad()) {
                std::vector<double> gcols(static_cast<std::size_t>(Q) * P, 0.0);
                const double* wd = w.data();
                for (int co = 0; co < Co; co++) {
                    const double* grow = go + static_cast<std::size_t>(co) * P;
                    const double* wrow = wd + static_cast<std::size_t>(co) * Q;
                    for (int q = 0; q < Q; q++) {
                        const double wv = wrow[q];
                        if (wv == 0.0) continue;
                        double* gcol = gcols.data() + static_cast<std::size_t>(q) * P;
                        for (int p = 0; p < P; p++) gcol[p] += wv * grow[p];
                    }
                }
                col2im_add(gcols, x.grad(), Ci, H, W, k, stride, pad, Ho, Wo);
            }
        });
    }
    return out;
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BnState& state,
                 BnMode mode, double eps, double momentum) {
    check(x.ndim() == 2, "batchnorm: rank-2 input required");
    const int N = x.dim(0), C = x.dim(1);
    check(gamma.ndim() == 1 && gamma.dim(0) == C && beta.ndim() == 1 && beta.dim(0) == C,
          "batchnorm: parameter shape mismatch");
    check(static_cast<int>(state.running_mean.size()) == C &&
              static_cast<int>(state.running_var.size()) == C,
          "batchnorm: state size mismatch");

    Tensor out = Tensor::zeros({N, C}, taped({&x, &gamma, &beta}));
    const double* xd = x.data();
    const double* gd = gamma.data();
    const double* bd = beta.data();
    double* od = out.data();

    if (mode == BnMode::train && N >= 2) {
        std::vector<double> mu(C, 0.0), var(C, 0.0), inv_sigma(C, 0.0);
        for (int r = 0; r < N; r++) {
            for (int c = 0; c < C; c++) mu[c] += xd[static_cast<std::size_t>(r) * C + c];
        }
        for (int c = 0; c < C; c++) mu[c] /= N;
        for (int r = 0; r < N; r++) {
            for (int c = 0; c < C; c++) {
                const double d = xd[static_cast<std::size_t>(r) * C + c] - mu[c];
                var[c] += d * d;
            }
        }
        for (int c = 0; c < C; c++) {
            var[c] /= N;
            inv_sigma[c] = 1.0 / std::sqrt(var[c] + eps);
        }
        auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N) * C);
        for (int r = 0; r < N; r++) {
            for (int c = 0; c < C; c++) {
                const std::size_t i = static_cast<std::size_t>(r) * C + c;
                (*xhat)[i] = (xd[i] - mu[c]) * inv_sigma[c];
                od[i] = gd[c] * (*xhat)[i] + bd[c];
            }
        }
        for (int c = 0; c < C; c++) {
            state.running_mean[c] = (1.0 - momentum) * state.running_mean[c] + momentum * mu[c];
            state.running_var[c] =
                (1.0 - momentum) * state.running_var[c] + momentum * var[c] * N / (N - 1.0);
        }
        if (out.requires_grad()) {
            Tape::active()->record([x, gamma, beta, out, xhat, inv_sigma]() {
                const int N = x.dim(0), C = x.dim(1);
                const double* go = out.grad();
                if (beta.requires_grad()) {
                    double* gb = beta.grad();
                    for (int r = 0; r < N; r++) {
                        for (int c = 0; c < C; c++) gb[c] += go[static_cast<std::size_t>(r) * C + c];
                    }
                }
                if (gamma.requires_grad()) {
                    double* gg = gamma.grad();
                    for (int r = 0; r < N; r++) {
                        for (int c = 0; c < C; c++) {
                            const std::size_t i = static_cast<std::size_t>(r) * C + c;
                            gg[c] += go[i] * (*xhat)[i];
                        }
                    }
                }
                if (x.requires_grad()) {
                    // coupled derivative through the batch statistics
                    std::vector<double> sum_dxhat(C, 0.0), sum_dxhat_xhat(C, 0.0);
                    const double* gd = gamma.data();
                    for (int r = 0; r < N; r++) {
                        for (int c = 0; c < C; c++) {
                            const std::size_t i = static_cast<std::size_t>(r) * C + c;
                            const double dxh = go[i] * gd[c];
                            sum_dxhat[c] += dxh;
                            sum_dxhat_xhat[c] += dxh * (*xhat)[i];
                        }
                    }
                    double* gx = x.grad();
                    for (int r = 0; r < N; r++) {
                        for (int c = 0; c < C; c++) {
                            const std::size_t i = static_cast<std::size_t>(r) * C + c;
                            const double dxh = go[i] * gd[c];
                            gx[i] += inv_sigma[c] *
                                     (dxh - sum_dxhat[c] / N - (*xhat)[i] * sum_dxhat_xhat[c] / N);
                        }
                    }
                }
            });
        }
        return out;
    }

    // eval mode, or a degenerate train batch (N < 2): running stats are the
    // normalizer in eval; the degenerate train case is the plain affine map.
    std::vector<double> shift(C), inv_sigma(C);
    if (mode == BnMode::eval) {
        for (int c = 0; c < C; c++) {
            shift[c] = state.running_mean[c];
            inv_sigma[c] = 1.0 / std::sqrt(state.running_var[c] + eps);
        }
    } else {
        for (int c = 0; c < C; c++) {
            shift[c] = 0.0;
            inv_sigma[c] = 1.0;
        }
    }
    auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N) * C);
    for (int r = 0; r < N; r++) {
        for (int c = 0; c < C; c++) {
            const std::size_t i = static_cast<std::size_t>(r) * C + c;
            (*xhat)[i] = (xd[i] - shift[c]) * inv_sigma[c];
            od[i] = gd[c] * (*xhat)[i] + bd[c];
        }
    }
    if (out.requires_grad()) {
        Tape::active()->record([x, gamma, beta, out, xhat, inv_sigma]() {
            const int N = x.dim(0), C = x.dim(1);
            const double* go = out.grad();
            if (beta.requires_grad()) {
                double* gb = beta.grad();
                for (int r = 0; r < N; r++) {
                    for (int c = 0; c < C; c++) gb[c] += go[static_cast<std::size_t>(r) * C + c];
                }
            }
            if (gamma.requires_grad()) {
                double* gg = gamma.grad();
                for (int r = 0; r < N; r++) {
                    for (int c = 0; c < C; c++) {
                        const std::size_t i = static_cast<std::size_t>(r) * C + c;
                        gg[c] += go[i] * (*xhat)[i];
                    }
                }
            }
            if (x.requires_grad()) {
                double* gx = x.grad();
                const double* gd = gamma.data();
                for (int r = 0; r < N; r++) {
                    for (int c = 0; c < C; c++) {
                        const std::size_t i = static_cast<std::size_t>(r) * C + c;
                        gx[i] += go[i] * gd[c] * inv_sigma[c];
                    }
                }
            }
        });
    }
    return out;
}

Tensor max_reduce_segments(const Tensor& x, const std::vector<int>& seg_offsets) {
    check(x.ndim() == 2, "max_reduce_segments: rank-2 input required");
    check(seg_offsets.size() >= 2, "max_reduce_segments: need at least one segment");
    check(seg_offsets.front() == 0 && seg_offsets.back() == x.dim(0),
          "max_reduce_segments: offsets must cover all rows");
    const int n = static_cast<int>(seg_offsets.size()) - 1;
    const int d = x.dim(1);
    for (int s = 0; s < n; s++) {
        if (seg_offsets[s + 1] <= seg_offsets[s]) {
            throw std::runtime_error("max_reduce_segments: empty segment " + std::to_string(s));
        }
    }
    Tensor out = Tensor::zeros({n, d}, taped({&x}));
    auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(n) * d);
    const double* xd = x.data();
    double* od = out.data();
    for (int s = 0; s < n; s++) {
        const int lo = seg_offsets[s], hi = seg_offsets[s + 1];
        for (int c = 0; c < d; c++) {
            double best = xd[static_cast<std::size_t>(lo) * d + c];
            int best_r = lo;
            for (int r = lo + 1; r < hi; r++) {
                const double v = xd[static_cast<std::size_t>(r) * d + c];
                if (v > best) {  // strict: ties keep the lowest row
                    best = v;
                    best_r = r;
                }
            }
            od[static_cast<std::size_t>(s) * d + c] = best;
            (*argmax)[static_cast<std::size_t>(s) * d + c] = best_r;
        }
    }
    if (out.requires_grad()) {
        Tape::active()->record([x, out, argmax]() {
            const int n = out.dim(0), d = out.dim(1);
            const double* go = out.grad();
            double* gx = x.grad();
            for (int s = 0; s < n; s++) {
                for (int c = 0; c < d; c++) {
                    const std::size_t i = static_cast<std::size_t>(s) * d + c;
                    gx[static_cast<std::size_t>((*argmax)[i]) * d + c] += go[i];
                }
            }
        });
    }
    return out;
}

Tensor bce_loss(const Tensor& p, const Tensor& y, double clamp_eps) {
    check(p.size() == y.size(), "bce_loss: size mismatch");
    check(clamp_eps > 0.0 && clamp_eps < 0.5, "bce_loss: clamp_eps out of range");
    const int n = p.size();
    Tensor out = Tensor::zeros({1}, taped({&p}));
    const double* pd = p.data();
    const double* yd = y.data();
    double acc = 0.0;
    for (int i = 0; i < n; i++) {
        const double ph = std::clamp(pd[i], clamp_eps, 1.0 - clamp_eps);
        acc -= yd[i] * std::log(ph) + (1.0 - yd[i]) * std::log(1.0 - ph);
    }
    out.data()[0] = acc / n;
    if (out.requires_grad()) {
        Tape::active()->record([p, y, out, clamp_eps]() {
            const int n = p.size();
            const double g = out.grad()[0] / n;
            const double* pd = p.data();
            const double* yd = y.data();
            double* gp = p.grad();
            for (int i = 0; i < n; i++) {
                if (pd[i] <= clamp_eps || pd[i] >= 1.0 - clamp_eps) continue;  // clamped: flat
                gp[i] += g * (-yd[i] / pd[i] + (1.0 - yd[i]) / (1.0 - pd[i]));
            }
        });
    }
    return out;
}

Tensor masked_mse(const Tensor& pred, const Tensor& target, const Tensor& mask) {
    check(pred.ndim() == 3 && pred.dim(2) == 2, "masked_mse: pred must be [H, W, 2]");
    check(pred.shape() == target.shape(), "masked_mse: target shape mismatch");
    check(mask.size() * 2 == pred.size(), "masked_mse: mask shape mismatch");
    const int cells = mask.size();
    const double* pd = pred.data();
    const double* td = target.data();
    const double* md = mask.data();
    int cnt = 0;
    double acc = 0.0;
    for (int c = 0; c < cells; c++) {
        if (md[c] == 0.0) continue;
        cnt++;
        const double du = pd[2 * c] - td[2 * c];
        const double dv = pd[2 * c + 1] - td[2 * c + 1];
        acc += du * du + dv * dv;
    }
    Tensor out = Tensor::zeros({1}, taped({&pred}));
    out.data()[0] = cnt > 0 ? acc / cnt : 0.0;  // empty mask contributes nothing
    if (out.requires_grad() && cnt > 0) {
        Tape::active()->record([pred, target, mask, out, cnt]() {
            const int cells = mask.size();
            const double g = out.grad()[0] * 2.0 / cnt;
            const double* pd = pred.data();
            const double* td = target.data();
            const double* md = mask.data();
            double* gp = pred.grad();
            for (int c = 0; c < cells; c++) {
                if (md[c] == 0.0) continue;
                gp[2 * c] += g * (pd[2 * c] - td[2 * c]);
                gp[2 * c + 1] += g * (pd[2 * c + 1] - td[2 * c + 1]);
            }
        });
    }
    return out;
}

}  // namespace atlas::nn
