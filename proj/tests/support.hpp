#pragma once

#include <gtest/gtest.h>

#include <gmdkit/error.hpp>

#include <functional>

inline void expect_kind(gmdkit::ErrorKind kind, const std::function<void()>& fn)
{
    try {
        fn();
        ADD_FAILURE() << "expected an error of kind " << gmdkit::to_string(kind);
    } catch (const gmdkit::Error& e) {
        EXPECT_EQ(e.kind(), kind) << e.what();
    }
}
