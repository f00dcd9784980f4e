#include "sasq/persist.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace sasq {

// ------------------------------------------------------------ byte plumbing

namespace {

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size())
            throw PersistError(PersistError::Code::truncated,
                               "file truncated at byte " + std::to_string(pos) + " (need " +
                                   std::to_string(n) + " more)");
    }
    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(buf[pos++]);
    }
    uint16_t u16() {
        need(2);
        uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<uint16_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PersistError(PersistError::Code::io, "cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw PersistError(PersistError::Code::io, "read failed on '" + path + "'");
    return std::move(ss).str();
}

void write_file(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw PersistError(PersistError::Code::io, "cannot open '" + path + "' for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) throw PersistError(PersistError::Code::io, "write failed on '" + path + "'");
}

void encode_record(std::string& out, const TensorRecord& t) {
    if (t.name.empty() || t.name.size() > std::numeric_limits<uint16_t>::max())
        throw Error("tensor name length out of range: '" + t.name + "'");
    if (t.dtype > 1) throw Error("tensor '" + t.name + "' has unknown dtype");
    if (t.dims.empty() || t.dims.size() > 255)
        throw Error("tensor '" + t.name + "' has unsupported rank");
    int64_t n = 1;
    for (int64_t d : t.dims) {
        if (d < 1) throw Error("tensor '" + t.name + "' has non-positive dim");
        n *= d;
    }
    const int64_t have = t.dtype == 0 ? static_cast<int64_t>(t.f32.size())
                                      : static_cast<int64_t>(t.i32.size());
    if (n != have)
        throw Error("tensor '" + t.name + "' payload size " + std::to_string(have) +
                    " does not match dims (" + std::to_string(n) + ")");

    put_u16(out, static_cast<uint16_t>(t.name.size()));
    out.append(t.name);
    out.push_back(static_cast<char>(t.dtype));
    out.push_back(static_cast<char>(t.dims.size()));
    for (int64_t d : t.dims) put_u64(out, static_cast<uint64_t>(d));
    if (t.dtype == 0)
        for (float v : t.f32) put_u32(out, std::bit_cast<uint32_t>(v));
    else
        for (int32_t v : t.i32) put_u32(out, static_cast<uint32_t>(v));
}

TensorRecord decode_record(Reader& r) {
    TensorRecord t;
    const uint16_t name_len = r.u16();
    if (name_len == 0)
        throw PersistError(PersistError::Code::truncated, "empty tensor name in file");
    t.name = r.bytes(name_len);
    t.dtype = r.u8();
    if (t.dtype > 1)
        throw PersistError(PersistError::Code::bad_dtype,
                           "tensor '" + t.name + "' has dtype code " + std::to_string(t.dtype));
    const uint8_t rank = r.u8();
    if (rank == 0)
        throw PersistError(PersistError::Code::truncated, "tensor '" + t.name + "' has rank 0");
    int64_t n = 1;
    for (uint8_t i = 0; i < rank; ++i) {
        const uint64_t d = r.u64();
        if (d == 0 || d > (1ull << 32))
            throw PersistError(PersistError::Code::truncated,
                               "tensor '" + t.name + "' has invalid dim " + std::to_string(d));
        t.dims.push_back(static_cast<int64_t>(d));
        n *= static_cast<int64_t>(d);
    }
    if (t.dtype == 0) {
        t.f32.reserve(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) t.f32.push_back(std::bit_cast<float>(r.u32()));
    } else {
        t.i32.reserve(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) t.i32.push_back(static_cast<int32_t>(r.u32()));
    }
    return t;
}

void check_unique_names(const std::vector<TensorRecord>& tensors) {
    std::set<std::string> seen;
    for (const TensorRecord& t : tensors)
        if (!seen.insert(t.name).second)
            throw PersistError(PersistError::Code::duplicate_name,
                               "duplicate tensor name '" + t.name + "'");
}

constexpr char kMagic[4] = {'S', 'A', 'S', 'Q'};

void put_magic(std::string& out) { out.append(kMagic, 4); }

void check_magic(Reader& r, const std::string& path) {
    const std::string m = r.bytes(4);
    if (m != std::string(kMagic, 4))
        throw PersistError(PersistError::Code::bad_magic, "'" + path + "' is not a SASQ file");
}

void check_version(uint32_t v, const std::string& path) {
    if (v != kPersistVersion)
        throw PersistError(PersistError::Code::version_mismatch,
                           "'" + path + "' has format version " + std::to_string(v) +
                               ", expected " + std::to_string(kPersistVersion));
}

}  // namespace

// -------------------------------------------------------------- checkpoint

int64_t TensorRecord::numel() const {
    int64_t n = 1;
    for (int64_t d : dims) n *= d;
    return n;
}

void save_checkpoint(const std::string& path, const std::vector<TensorRecord>& tensors) {
    check_unique_names(tensors);
    if (tensors.size() > std::numeric_limits<uint32_t>::max())
        throw Error("too many tensors for one checkpoint");
    std::string out;
    put_magic(out);
    put_u32(out, kPersistVersion);
    put_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const TensorRecord& t : tensors) encode_record(out, t);
    write_file(path, out);
}

std::vector<TensorRecord> load_checkpoint(const std::string& path) {
    const std::string buf = read_file(path);
    Reader r{buf};
    check_magic(r, path);
    check_version(r.u32(), path);
    const uint32_t count = r.u32();
    std::vector<TensorRecord> tensors;
    tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) tensors.push_back(decode_record(r));
    if (r.pos != buf.size())
        throw PersistError(PersistError::Code::truncated,
                           "'" + path + "' has " + std::to_string(buf.size() - r.pos) +
                               " trailing bytes");
    check_unique_names(tensors);
    return tensors;
}

void save_model(const std::string& path, const Model& model) {
    std::vector<TensorRecord> tensors;
    model.for_each_param([&](const std::string& name, const FloatTensor& t) {
        TensorRecord rec;
        rec.name = name;
        rec.dtype = 0;
        rec.dims = t.shape().dims;
        rec.f32 = t.vec();
        tensors.push_back(std::move(rec));
    });
    save_checkpoint(path, tensors);
}

void load_model_weights(const std::string& path, Model& model) {
    if (model.weights_quantized())
        throw Error("load_model_weights: model weights are already quantized");
    std::vector<TensorRecord> tensors = load_checkpoint(path);
    std::set<std::string> want, have;
    model.for_each_param([&](const std::string& name, const FloatTensor&) { want.insert(name); });
    for (const TensorRecord& t : tensors) have.insert(t.name);
    if (want != have) {
        std::string msg = "'" + path + "' does not match the model;";
        for (const std::string& n : want)
            if (!have.count(n)) msg += " missing: " + n;
        for (const std::string& n : have)
            if (!want.count(n)) msg += " extra: " + n;
        throw PersistError(PersistError::Code::name_mismatch, msg);
    }
    std::map<std::string, const TensorRecord*> by_name;
    for (const TensorRecord& t : tensors) by_name[t.name] = &t;
    model.for_each_param([&](const std::string& name, FloatTensor& t) {
        const TensorRecord& rec = *by_name.at(name);
        if (rec.dtype != 0)
            throw PersistError(PersistError::Code::bad_dtype,
                               "parameter '" + name + "' stored with non-f32 dtype");
        if (rec.dims != t.shape().dims)
            throw PersistError(PersistError::Code::name_mismatch,
                               "parameter '" + name + "' has mismatched shape in '" + path + "'");
        std::copy(rec.f32.begin(), rec.f32.end(), t.data());
    });
}

// ------------------------------------------------------------- scale files

namespace {

uint32_t granularity_code(Granularity g) {
    switch (g) {
        case Granularity::per_tensor: return 0;
        case Granularity::per_token: return 1;
        case Granularity::per_channel: return 2;
    }
    throw Error("bad granularity");
}

Granularity granularity_from_code(uint32_t c, const std::string& path) {
    switch (c) {
        case 0: return Granularity::per_tensor;
        case 1: return Granularity::per_token;
        case 2: return Granularity::per_channel;
        default:
            throw PersistError(PersistError::Code::invalid_scale,
                               "'" + path + "' has unknown granularity code " + std::to_string(c));
    }
}

}  // namespace

void save_scales(const std::string& path, const ScaleSet& scales, int bits, Granularity g) {
    QuantSpec check;
    check.bits = bits;
    check.validate();
    if (scales.empty()) throw Error("save_scales: empty scale set");
    if (scales.size() > std::numeric_limits<uint32_t>::max())
        throw Error("too many scale entries");
    std::string out;
    put_magic(out);
    put_u32(out, kPersistVersion);
    put_u32(out, static_cast<uint32_t>(bits));
    put_u32(out, granularity_code(g));
    put_u32(out, static_cast<uint32_t>(scales.size()));
    std::set<std::string> seen;
    for (const auto& e : scales.entries()) {
        if (!seen.insert(e->name).second)
            throw PersistError(PersistError::Code::duplicate_name,
                               "duplicate scale entry '" + e->name + "'");
        TensorRecord rec;
        rec.name = e->name + ".s_x";
        rec.dtype = 0;
        rec.dims = e->scale.values.shape().dims;
        rec.f32 = e->scale.values.vec();
        encode_record(out, rec);
    }
    write_file(path, out);
}

LoadedScales load_scales(const std::string& path, float scale_floor) {
    const std::string buf = read_file(path);
    Reader r{buf};
    check_magic(r, path);
    check_version(r.u32(), path);
    LoadedScales out;
    const uint32_t bits = r.u32();
    if (bits < 2 || bits > 16)
        throw PersistError(PersistError::Code::invalid_scale,
                           "'" + path + "' declares unsupported bit width " +
                               std::to_string(bits));
    out.bits = static_cast<int>(bits);
    out.granularity = granularity_from_code(r.u32(), path);
    const uint32_t count = r.u32();
    for (uint32_t i = 0; i < count; ++i) {
        TensorRecord rec = decode_record(r);
        if (rec.dtype != 0)
            throw PersistError(PersistError::Code::bad_dtype,
                               "scale entry '" + rec.name + "' is not f32");
        if (rec.dims.size() != 1)
            throw PersistError(PersistError::Code::invalid_scale,
                               "scale entry '" + rec.name + "' is not rank 1");
        const std::string suffix = ".s_x";
        if (rec.name.size() <= suffix.size() ||
            rec.name.compare(rec.name.size() - suffix.size(), suffix.size(), suffix) != 0)
            throw PersistError(PersistError::Code::name_mismatch,
                               "scale entry '" + rec.name + "' lacks the .s_x suffix");
        for (float v : rec.f32)
            if (!(v >= scale_floor))
                throw PersistError(PersistError::Code::invalid_scale,
                                   "scale entry '" + rec.name + "' holds value " +
                                       std::to_string(v) + " below the floor " +
                                       std::to_string(scale_floor));
        ScaleVector sv;
        sv.granularity = out.granularity;
        // Take the size before std::move: argument evaluation order is unspecified.
        const int64_t n_scales = static_cast<int64_t>(rec.f32.size());
        sv.values = FloatTensor(Shape{n_scales}, std::move(rec.f32));
        try {
            out.scales.add(rec.name.substr(0, rec.name.size() - suffix.size()), std::move(sv));
        } catch (const Error& e) {
            throw PersistError(PersistError::Code::duplicate_name, e.what());
        }
    }
    if (r.pos != buf.size())
        throw PersistError(PersistError::Code::truncated,
                           "'" + path + "' has " + std::to_string(buf.size() - r.pos) +
                               " trailing bytes");
    return out;
}

// --------------------------------------------------------------- run config

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int64_t parse_i64(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const int64_t out = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': cannot parse integer from '" + v + "'");
    }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const uint64_t out = std::stoull(v, &used);
        if (used != v.size() || v.find('-') != std::string::npos)
            throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': cannot parse unsigned integer from '" + v +
                          "'");
    }
}

float parse_f32(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const float out = std::stof(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': cannot parse number from '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': cannot parse boolean from '" + v + "'");
}

std::string fmt_f32(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig c;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              " is not key=value: '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + " has an empty key");

        if (key == "model.vocab_size") c.model.vocab_size = parse_i64(key, val);
        else if (key == "model.d_model") c.model.d_model = parse_i64(key, val);
        else if (key == "model.n_layers") c.model.n_layers = parse_i64(key, val);
        else if (key == "model.n_heads") c.model.n_heads = parse_i64(key, val);
        else if (key == "model.d_ff") c.model.d_ff = parse_i64(key, val);
        else if (key == "model.max_seq_len") c.model.max_seq_len = parse_i64(key, val);
        else if (key == "model.norm_epsilon") c.model.norm_epsilon = parse_f32(key, val);
        else if (key == "model.quantize_head") c.model.quantize_head = parse_bool(key, val);
        else if (key == "model.seed") c.model_seed = parse_u64(key, val);
        else if (key == "model.checkpoint") c.model_checkpoint = val;
        else if (key == "quant.bits") c.quant.bits = static_cast<int>(parse_i64(key, val));
        else if (key == "quant.granularity") c.quant.granularity = granularity_from_name(val);
        else if (key == "quant.scale_floor") c.quant.scale_floor = parse_f32(key, val);
        else if (key == "quant.no_round") c.quant.no_round = parse_bool(key, val);
        else if (key == "quant.no_clamp") c.quant.no_clamp = parse_bool(key, val);
        else if (key == "quant.calib_batches") c.calib_batches = parse_i64(key, val);
        else if (key == "quant.calib_use_max") c.calib_use_max = parse_bool(key, val);
        else if (key == "train.learning_rate") c.train.learning_rate = parse_f32(key, val);
        else if (key == "train.epochs") c.train.epochs = parse_i64(key, val);
        else if (key == "train.beta1") c.train.beta1 = parse_f32(key, val);
        else if (key == "train.beta2") c.train.beta2 = parse_f32(key, val);
        else if (key == "train.adam_epsilon") c.train.adam_epsilon = parse_f32(key, val);
        else if (key == "train.weight_decay") c.train.weight_decay = parse_f32(key, val);
        else if (key == "train.batch_windows") c.train.batch_windows = parse_i64(key, val);
        else if (key == "train.seed") c.train.seed = parse_u64(key, val);
        else if (key == "train.eval_every") c.train.eval_every = parse_i64(key, val);
        else if (key == "gen.max_new_tokens") c.gen.max_new_tokens = parse_i64(key, val);
        else if (key == "gen.temperature") c.gen.temperature = parse_f32(key, val);
        else if (key == "gen.top_p") c.gen.top_p = parse_f32(key, val);
        else if (key == "gen.greedy") c.gen.greedy = parse_bool(key, val);
        else if (key == "gen.eos_id") c.gen.eos_id = static_cast<int32_t>(parse_i64(key, val));
        else if (key == "gen.seed") c.gen.seed = parse_u64(key, val);
        else if (key == "pretrain.learning_rate") c.pretrain.learning_rate = parse_f32(key, val);
        else if (key == "pretrain.steps") c.pretrain.steps = parse_i64(key, val);
        else if (key == "pretrain.window") c.pretrain.window = parse_i64(key, val);
        else if (key == "pretrain.seed") c.pretrain.seed = parse_u64(key, val);
        else if (key == "pretrain.beta1") c.pretrain.beta1 = parse_f32(key, val);
        else if (key == "pretrain.beta2") c.pretrain.beta2 = parse_f32(key, val);
        else if (key == "pretrain.adam_epsilon") c.pretrain.adam_epsilon = parse_f32(key, val);
        else if (key == "pretrain.weight_decay") c.pretrain.weight_decay = parse_f32(key, val);
        else if (key == "pretrain.clip_norm") c.pretrain.clip_norm = parse_f32(key, val);
        else throw ConfigError("unknown config key '" + key + "'");
    }
    c.model.validate();
    c.quant.validate();
    c.train.validate();
    c.gen.validate();
    c.pretrain.validate();
    if (c.calib_batches < 1) throw ConfigError("quant.calib_batches must be >= 1");
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    return parse(read_file(path));
}

std::string RunConfig::echo() const {
    std::ostringstream out;
    out << "model.vocab_size=" << model.vocab_size << "\n";
    out << "model.d_model=" << model.d_model << "\n";
    out << "model.n_layers=" << model.n_layers << "\n";
    out << "model.n_heads=" << model.n_heads << "\n";
    out << "model.d_ff=" << model.d_ff << "\n";
    out << "model.max_seq_len=" << model.max_seq_len << "\n";
    out << "model.norm_epsilon=" << fmt_f32(model.norm_epsilon) << "\n";
    out << "model.quantize_head=" << (model.quantize_head ? "true" : "false") << "\n";
    out << "model.seed=" << model_seed << "\n";
    out << "model.checkpoint=" << model_checkpoint << "\n";
    out << "quant.bits=" << quant.bits << "\n";
    out << "quant.granularity=" << granularity_name(quant.granularity) << "\n";
    out << "quant.scale_floor=" << fmt_f32(quant.scale_floor) << "\n";
    out << "quant.no_round=" << (quant.no_round ? "true" : "false") << "\n";
    out << "quant.no_clamp=" << (quant.no_clamp ? "true" : "false") << "\n";
    out << "quant.calib_batches=" << calib_batches << "\n";
    out << "quant.calib_use_max=" << (calib_use_max ? "true" : "false") << "\n";
    out << "train.learning_rate=" << fmt_f32(train.learning_rate) << "\n";
    out << "train.epochs=" << train.epochs << "\n";
    out << "train.beta1=" << fmt_f32(train.beta1) << "\n";
    out << "train.beta2=" << fmt_f32(train.beta2) << "\n";
    out << "train.adam_epsilon=" << fmt_f32(train.adam_epsilon) << "\n";
    out << "train.weight_decay=" << fmt_f32(train.weight_decay) << "\n";
    out << "train.batch_windows=" << train.batch_windows << "\n";
    out << "train.seed=" << train.seed << "\n";
    out << "train.eval_every=" << train.eval_every << "\n";
    out << "gen.max_new_tokens=" << gen.max_new_tokens << "\n";
    out << "gen.temperature=" << fmt_f32(gen.temperature) << "\n";
    out << "gen.top_p=" << fmt_f32(gen.top_p) << "\n";
    out << "gen.greedy=" << (gen.greedy ? "true" : "false") << "\n";
    out << "gen.eos_id=" << gen.eos_id << "\n";
    out << "gen.seed=" << gen.seed << "\n";
    out << "pretrain.learning_rate=" << fmt_f32(pretrain.learning_rate) << "\n";
    out << "pretrain.steps=" << pretrain.steps << "\n";
    out << "pretrain.window=" << pretrain.window << "\n";
    out << "pretrain.seed=" << pretrain.seed << "\n";
    out << "pretrain.beta1=" << fmt_f32(pretrain.beta1) << "\n";
    out << "pretrain.beta2=" << fmt_f32(pretrain.beta2) << "\n";
    out << "pretrain.adam_epsilon=" << fmt_f32(pretrain.adam_epsilon) << "\n";
    out << "pretrain.weight_decay=" << fmt_f32(pretrain.weight_decay) << "\n";
    out << "pretrain.clip_norm=" << fmt_f32(pretrain.clip_norm) << "\n";
    return std::move(out).str();
}

// ------------------------------------------------------------------ corpus

std::vector<int32_t> tokenize_bytes(const std::string& text) {
    std::vector<int32_t> out;
    out.reserve(text.size());
    for (unsigned char ch : text)
        if (ch != 0) out.push_back(static_cast<int32_t>(ch));
    return out;
}

std::string detokenize_bytes(const std::vector<int32_t>& tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (int32_t t : tokens) {
        if (t < 0 || t > 255) throw DataError("detokenize: token id " + std::to_string(t) +
                                              " is not a byte");
        if (t == 0) continue;  // EOS carries no text
        out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    }
    return out;
}

std::vector<int32_t> load_corpus(const std::string& path) {
    return tokenize_bytes(read_file(path));
}

}  // namespace sasq
