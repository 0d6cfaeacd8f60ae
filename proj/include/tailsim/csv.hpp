#pragma once

// Minimal CSV helpers for the fixed, comma-only formats this project writes.
// No quoting: none of our fields can contain commas.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tailsim::csv {

// Shortest round-trip decimal; "inf" for +infinity.
inline std::string num(double v)
{
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double to_double(std::string_view s)
{
    if (s == "inf")
        return std::numeric_limits<double>::infinity();
    if (s == "-inf")
        return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw std::invalid_argument("not a number: '" + std::string(s) + "'");
    return v;
}

inline long to_long(std::string_view s)
{
    long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw std::invalid_argument("not an integer: '" + std::string(s) + "'");
    return v;
}

inline std::vector<std::string> split(std::string_view line, char sep = ',')
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(sep, start);
        out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos)
            break;
        start = pos + 1;
    }
    return out;
}

// Reads a headed CSV and checks the header matches `expected` exactly.
inline std::vector<std::vector<std::string>> read(std::istream& in, const std::vector<std::string>& expected)
{
    std::string line;
    if (!std::getline(in, line))
        throw std::invalid_argument("empty CSV input");
    if (!line.empty() && line.back() == '\r')
        line.pop_back();
    if (split(line) != expected) {
        std::string want;
        for (const auto& h : expected)
            want += (want.empty() ? "" : ",") + h;
        throw std::invalid_argument("unexpected CSV header '" + line + "', expected '" + want + "'");
    }
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        auto row = split(line);
        if (row.size() != expected.size())
            throw std::invalid_argument("CSV row has " + std::to_string(row.size()) + " fields: '" + line + "'");
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace tailsim::csv
