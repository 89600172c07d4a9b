#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "harvest/util.hpp"

namespace harvest {

/// Minimal RFC-4180 CSV writer. Fields containing commas, quotes or newlines
/// are quoted; doubles use a fixed "%.12g" so reruns are byte-identical.
class CsvWriter {
  public:
    explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("cannot open for writing: " + path);
    }

    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ',';
            out_ << quote(fields[i]);
        }
        out_ << "\r\n";
    }

    void row_values(const std::vector<double>& vals) {
        for (std::size_t i = 0; i < vals.size(); ++i) {
            if (i) out_ << ',';
            out_ << format_double(vals[i]);
        }
        out_ << "\r\n";
    }

    static std::string quote(const std::string& f) {
        bool needs = f.find_first_of(",\"\r\n") != std::string::npos;
        if (!needs) return f;
        std::string q = "\"";
        for (char c : f) {
            if (c == '"') q += "\"\"";
            else q += c;
        }
        q += "\"";
        return q;
    }

  private:
    std::ofstream out_;
};

} // namespace harvest
