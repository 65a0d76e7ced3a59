#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vdmood/matrix.hpp"
#include "vdmood/predictor.hpp"
#include "vdmood/rng.hpp"
#include "vdmood/tape.hpp"

namespace vdmood {

struct DenoiserConfig {
    int input_dim = 2;
    int num_classes = 0;                  // trainable class rows; 0 = unconditional only
    int fourier_n = 7;                    // augment with sin/cos(2^n pi z)
    int time_embed_dim = 128;             // must be even
    int class_embed_dim = 128;            // must equal time_embed_dim (the two are summed)
    std::vector<int> hidden_dims = {256, 128, 64, 128, 256};

    void validate() const {
        if (input_dim < 1) throw std::invalid_argument("denoiser: input_dim must be positive");
        if (num_classes < 0) throw std::invalid_argument("denoiser: negative num_classes");
        if (fourier_n < 0 || fourier_n > 24)
            throw std::invalid_argument("denoiser: fourier_n out of range");
        if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
            throw std::invalid_argument("denoiser: time_embed_dim must be even and >= 2");
        if (class_embed_dim != time_embed_dim)
            throw std::invalid_argument(
                "denoiser: class_embed_dim must equal time_embed_dim (embeddings are summed)");
        if (hidden_dims.empty()) throw std::invalid_argument("denoiser: no hidden layers");
        for (int h : hidden_dims)
            if (h < 1) throw std::invalid_argument("denoiser: hidden width must be positive");
    }
};

// Sinusoidal position code for t in [0, 1]: first half sin, second half cos,
// angular frequencies log-spaced so nearby times stay nearby (small steps in t
// move the embedding by a bounded amount).
inline void time_embedding_row(double t, int dim, double* out) {
    int half = dim / 2;
    for (int k = 0; k < half; ++k) {
        double frac = half > 1 ? static_cast<double>(k) / (half - 1) : 0.0;
        double freq = 6.283185307179586 * std::exp(frac * std::log(30.0));  // 2*pi*[1..30]
        out[k] = std::sin(freq * t);
        out[half + k] = std::cos(freq * t);
    }
}

inline Matrix time_embedding(double t, int dim) {
    Matrix m(1, dim);
    time_embedding_row(t, dim, m.row(0));
    return m;
}

// Tape node ids for all trainable tensors, in serialization order.
struct DenoiserTapeIds {
    Tape::Id time_w = -1, time_b = -1;
    Tape::Id class_table = -1;  // -1 when num_classes == 0
    struct Block {
        Tape::Id w, b, cond, ln_gain, ln_bias;
    };
    std::vector<Block> blocks;
    Tape::Id out_w = -1, out_b = -1;
};

// Fully connected encoder-decoder over fourier-augmented inputs. Summed time
// and class embeddings are projected into every hidden block pre-activation;
// mirrored blocks of equal width are joined by residual adds. The output head
// starts at zero, so a fresh model predicts zero noise everywhere.
class DenoiserModel : public NoisePredictor {
  public:
    DenoiserModel() = default;

    DenoiserModel(DenoiserConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(init_seed, 0x494e4954);  // "INIT"
        int e = cfg_.time_embed_dim;
        time_w_ = random_init(e, e, rng);
        time_b_ = Matrix(1, e);
        // Class rows start at zero: a class that never receives gradient
        // stays bit-identical to the structural zero row used for "null".
        class_table_ = Matrix(cfg_.num_classes, cfg_.class_embed_dim);
        int in = 3 * cfg_.input_dim;
        for (int h : cfg_.hidden_dims) {
            Block b;
            b.w = random_init(in, h, rng);
            b.b = Matrix(1, h);
            b.cond = random_init(e, h, rng);
            b.ln_gain = Matrix::full(1, h, 1.0);
            b.ln_bias = Matrix(1, h);
            blocks_.push_back(std::move(b));
            in = h;
        }
        out_w_ = Matrix(in, cfg_.input_dim);
        out_b_ = Matrix(1, cfg_.input_dim);
    }

    const DenoiserConfig& config() const { return cfg_; }
    int dim() const override { return cfg_.input_dim; }

    // All trainable tensors in a fixed order; the same order is used by the
    // optimizer, the checkpoint payload and the tape registration below.
    std::vector<Matrix*> parameters() {
        std::vector<Matrix*> ps{&time_w_, &time_b_};
        if (cfg_.num_classes > 0) ps.push_back(&class_table_);
        for (Block& b : blocks_) {
            ps.push_back(&b.w);
            ps.push_back(&b.b);
            ps.push_back(&b.cond);
            ps.push_back(&b.ln_gain);
            ps.push_back(&b.ln_bias);
        }
        ps.push_back(&out_w_);
        ps.push_back(&out_b_);
        return ps;
    }
    std::vector<const Matrix*> parameters() const {
        auto ps = const_cast<DenoiserModel*>(this)->parameters();
        return std::vector<const Matrix*>(ps.begin(), ps.end());
    }

    size_t parameter_count() const {
        size_t n = 0;
        for (const Matrix* p : parameters()) n += p->size();
        return n;
    }

    DenoiserTapeIds register_params(Tape& tape, bool trainable) const {
        auto put = [&](const Matrix& m) {
            return trainable ? tape.variable(m) : tape.constant(m);
        };
        DenoiserTapeIds ids;
        ids.time_w = put(time_w_);
        ids.time_b = put(time_b_);
        if (cfg_.num_classes > 0) ids.class_table = put(class_table_);
        for (const Block& b : blocks_)
            ids.blocks.push_back({put(b.w), put(b.b), put(b.cond), put(b.ln_gain), put(b.ln_bias)});
        ids.out_w = put(out_w_);
        ids.out_b = put(out_b_);
        return ids;
    }

    // Core forward pass. z is a tape node (n x d); t_col holds one time per
    // row and is treated as data, never differentiated.
    Tape::Id build(Tape& tape, Tape::Id z, const Matrix& t_col, std::span<const int> class_ids,
                   const DenoiserTapeIds& ids) const {
        const Matrix& zv = tape.value(z);
        int n = zv.rows;
        if (zv.cols != cfg_.input_dim) throw std::invalid_argument("denoiser: input dim mismatch");
        if (t_col.rows != n || t_col.cols != 1)
            throw std::invalid_argument("denoiser: t column shape mismatch");
        if (!class_ids.empty() && static_cast<int>(class_ids.size()) != n)
            throw std::invalid_argument("denoiser: class id count mismatch");
        for (int id : class_ids)
            if (id < -1 || id >= cfg_.num_classes)
                throw std::invalid_argument("denoiser: class id out of range");

        // fourier augmentation stays on the tape (the flow differentiates it)
        double w = std::pow(2.0, cfg_.fourier_n) * 3.14159265358979323846;
        Tape::Id zs = tape.scale(z, w);
        Tape::Id x = tape.concat_cols(tape.concat_cols(z, tape.sin(zs)), tape.cos(zs));

        // conditioning vector: learned map of the time code plus a class row
        Matrix traw(n, cfg_.time_embed_dim);
        for (int i = 0; i < n; ++i)
            time_embedding_row(t_col.at(i, 0), cfg_.time_embed_dim, traw.row(i));
        Tape::Id e = tape.add_rowvec(tape.matmul(tape.constant(std::move(traw)), ids.time_w),
                                     ids.time_b);
        if (cfg_.num_classes > 0 && !class_ids.empty()) {
            Matrix onehot(n, cfg_.num_classes);
            for (int i = 0; i < n; ++i)
                if (class_ids[i] >= 0) onehot.at(i, class_ids[i]) = 1.0;
            e = tape.add(e, tape.matmul(tape.constant(std::move(onehot)), ids.class_table));
        }

        std::vector<Tape::Id> outputs;
        Tape::Id cur = x;
        int nblocks = static_cast<int>(blocks_.size());
        for (int i = 0; i < nblocks; ++i) {
            const auto& bid = ids.blocks[i];
            Tape::Id pre = tape.add_rowvec(tape.matmul(cur, bid.w), bid.b);
            pre = tape.add(pre, tape.matmul(e, bid.cond));
            Tape::Id act = tape.gelu(tape.layernorm(pre, bid.ln_gain, bid.ln_bias));
            int mirror = nblocks - 1 - i;
            if (mirror < i && cfg_.hidden_dims[mirror] == cfg_.hidden_dims[i])
                act = tape.add(act, outputs[mirror]);
            outputs.push_back(act);
            cur = act;
        }
        return tape.add_rowvec(tape.matmul(cur, ids.out_w), ids.out_b);
    }

    Tape::Id build_eps(Tape& tape, Tape::Id z, double t,
                       std::span<const int> class_ids) const override {
        DenoiserTapeIds ids = register_params(tape, false);
        return build(tape, z, Matrix::full(tape.value(z).rows, 1, t), class_ids, ids);
    }

    // Single-sample convenience used by callers that hold one feature vector.
    Matrix predict_noise(const Matrix& z_row, double t, int class_id = -1) const {
        if (z_row.rows != 1) throw std::invalid_argument("predict_noise: expected a single row");
        int ids[1] = {class_id};
        return predict(z_row, t, std::span<const int>(ids, 1));
    }

  private:
    struct Block {
        Matrix w, b, cond, ln_gain, ln_bias;
    };

    DenoiserConfig cfg_;
    Matrix time_w_, time_b_, class_table_;
    std::vector<Block> blocks_;
    Matrix out_w_, out_b_;

    static Matrix random_init(int fan_in, int out, Rng& rng) {
        Matrix m(fan_in, out);
        double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& v : m.data) v = s * rng.normal();
        return m;
    }
};

}  // namespace vdmood
