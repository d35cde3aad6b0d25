#pragma once

// Univariate series ingestion, normalization, windowing and chronological
// splits. CSV files are RFC-4180-style with a header row and '.' decimal
// separator; cells must parse as finite numbers (no silent imputation).

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsrob/linalg.hpp"

namespace tsrob {

struct SeriesError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FileNotFound : SeriesError {
    explicit FileNotFound(const std::string& path) : SeriesError("file not found: " + path) {}
};
struct ColumnNotFound : SeriesError {
    explicit ColumnNotFound(const std::string& col) : SeriesError("column not found: " + col) {}
};
struct NonNumericCell : SeriesError {
    std::size_t row;
    NonNumericCell(std::size_t r, const std::string& cell)
        : SeriesError("non-numeric cell at data row " + std::to_string(r) + ": '" + cell + "'"), row(r) {}
};
struct SeriesTooShort : SeriesError {
    using SeriesError::SeriesError;
};
struct DegenerateSeries : SeriesError {
    using SeriesError::SeriesError;
};

// ----------------------------------------------------------------------------
// RawSeries
// ----------------------------------------------------------------------------

struct RawSeries {
    Vec values;
    std::string name;
    std::string frequency;  // optional sampling-period descriptor, e.g. "1H"

    std::size_t size() const { return values.size(); }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') { cur += '"'; ++i; }
                else quoted = false;
            } else cur += c;
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    cells.push_back(cur);
    return cells;
}

inline std::optional<double> parse_cell(const std::string& raw) {
    std::size_t b = raw.find_first_not_of(" \t");
    if (b == std::string::npos) return std::nullopt;
    std::size_t e = raw.find_last_not_of(" \t");
    const char* first = raw.data() + b;
    const char* last = raw.data() + e + 1;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last || !std::isfinite(v)) return std::nullopt;
    return v;
}

} // namespace detail

// Loads one column of a CSV file. `column` is a header name, or a 0-based
// index when it parses as an unsigned integer not present in the header.
inline RawSeries load_csv(const std::string& path, const std::string& column) {
    std::ifstream in(path);
    if (!in) throw FileNotFound(path);
    std::string line;
    if (!std::getline(in, line)) throw SeriesError("empty file: " + path);
    const auto header = detail::split_csv_line(line);

    std::size_t col = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == column) { col = i; break; }
    if (col == header.size()) {
        // fall back to numeric index
        try {
            std::size_t pos = 0;
            const unsigned long idx = std::stoul(column, &pos);
            if (pos == column.size() && idx < header.size()) col = idx;
        } catch (...) {}
    }
    if (col == header.size()) throw ColumnNotFound(column);

    RawSeries s;
    s.name = header[col];
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty() && in.peek() == EOF) break;
        ++row;
        const auto cells = detail::split_csv_line(line);
        if (col >= cells.size()) throw NonNumericCell(row, "<missing>");
        const auto v = detail::parse_cell(cells[col]);
        if (!v) throw NonNumericCell(row, cells[col]);
        s.values.push_back(*v);
    }
    return s;
}

// Writes series as single-column CSV; %.17g round-trips doubles exactly.
inline void save_csv(const std::string& path, const RawSeries& s) {
    std::ofstream out(path);
    if (!out) throw SeriesError("cannot open for write: " + path);
    out << (s.name.empty() ? "value" : s.name) << "\n";
    char buf[64];
    for (double v : s.values) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << buf << "\n";
    }
}

// ----------------------------------------------------------------------------
// Windowing
// ----------------------------------------------------------------------------

struct SeriesWindow {
    Vec input;                 // y_{k-l+1 : k}, length l
    Vec target;                // y_{k+1 : k+h}, length h
    std::size_t origin_index;  // k (index of the last input sample)
};

inline std::vector<SeriesWindow> make_windows(const RawSeries& series, std::size_t lookback,
                                              std::size_t horizon, std::size_t stride = 1) {
    if (lookback < 1 || horizon < 1 || stride < 1)
        throw SeriesError("make_windows: lookback, horizon and stride must be >= 1");
    const std::size_t n = series.size();
    if (n < lookback + horizon)
        throw SeriesTooShort("series length " + std::to_string(n) + " < lookback+horizon = " +
                             std::to_string(lookback + horizon));
    std::vector<SeriesWindow> out;
    for (std::size_t k = lookback - 1; k + horizon < n; k += stride) {
        SeriesWindow w;
        w.origin_index = k;
        w.input.assign(series.values.begin() + (k + 1 - lookback), series.values.begin() + (k + 1));
        w.target.assign(series.values.begin() + (k + 1), series.values.begin() + (k + 1 + horizon));
        out.push_back(std::move(w));
    }
    return out;
}

// ----------------------------------------------------------------------------
// Scaler
// ----------------------------------------------------------------------------

enum class ScalerKind { Standard, MinMax, Identity };

inline const char* to_string(ScalerKind k) {
    switch (k) {
        case ScalerKind::Standard: return "standard";
        case ScalerKind::MinMax: return "min-max";
        case ScalerKind::Identity: return "identity";
    }
    return "?";
}

inline ScalerKind scaler_kind_from_string(const std::string& s) {
    if (s == "standard") return ScalerKind::Standard;
    if (s == "min-max" || s == "minmax") return ScalerKind::MinMax;
    if (s == "identity") return ScalerKind::Identity;
    throw SeriesError("unknown scaler kind: " + s);
}

struct Scaler {
    double shift = 0.0;
    double scale = 1.0;  // strictly positive
    ScalerKind kind = ScalerKind::Identity;

    double apply(double x) const { return (x - shift) / scale; }
    double invert(double z) const { return z * scale + shift; }

    Vec apply(const Vec& x) const {
        Vec r(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) r[i] = apply(x[i]);
        return r;
    }
    Vec invert(const Vec& z) const {
        Vec r(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) r[i] = invert(z[i]);
        return r;
    }
};

inline Scaler fit_scaler(const RawSeries& series, ScalerKind kind) {
    Scaler s;
    s.kind = kind;
    if (kind == ScalerKind::Identity) return s;
    const Vec& v = series.values;
    if (v.empty()) throw DegenerateSeries("cannot fit scaler on empty series");
    if (kind == ScalerKind::Standard) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        var /= static_cast<double>(v.size());
        if (var <= 0.0) throw DegenerateSeries("constant series: standard scaler undefined");
        s.shift = mean;
        s.scale = std::sqrt(var);
    } else {
        double lo = v[0], hi = v[0];
        for (double x : v) { lo = std::min(lo, x); hi = std::max(hi, x); }
        if (hi <= lo) throw DegenerateSeries("constant series: min-max scaler undefined");
        s.shift = lo;
        s.scale = hi - lo;
    }
    return s;
}

inline RawSeries apply_scaler(const Scaler& s, const RawSeries& in) {
    RawSeries out = in;
    out.values = s.apply(in.values);
    return out;
}

// ----------------------------------------------------------------------------
// Chronological split
// ----------------------------------------------------------------------------

struct SplitFractions {
    double train = 0.70, val = 0.10, test = 0.20;
};

struct SeriesSplit {
    RawSeries train, val, test;
    std::size_t train_begin = 0, val_begin = 0, test_begin = 0;  // offsets into the source
};

inline SeriesSplit chronological_split(const RawSeries& s, const SplitFractions& f = {}) {
    if (f.train <= 0 || f.val < 0 || f.test <= 0 || f.train + f.val + f.test > 1.0 + 1e-9)
        throw SeriesError("invalid split fractions");
    const std::size_t n = s.size();
    const std::size_t n_train = static_cast<std::size_t>(f.train * static_cast<double>(n));
    const std::size_t n_val = static_cast<std::size_t>(f.val * static_cast<double>(n));
    SeriesSplit out;
    out.train_begin = 0;
    out.val_begin = n_train;
    out.test_begin = n_train + n_val;
    auto slice = [&](std::size_t b, std::size_t e, const char* tag) {
        RawSeries r;
        r.name = s.name + ":" + tag;
        r.frequency = s.frequency;
        r.values.assign(s.values.begin() + b, s.values.begin() + e);
        return r;
    };
    out.train = slice(0, n_train, "train");
    out.val = slice(n_train, n_train + n_val, "val");
    out.test = slice(n_train + n_val, n, "test");
    return out;
}

} // namespace tsrob
