#pragma once

#include <stdexcept>
#include <string>

namespace bnk {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define BNK_DECLARE_ERROR(Name)                                  \
    class Name : public Error {                                  \
    public:                                                      \
        explicit Name(const std::string& what) : Error(what) {} \
    }

BNK_DECLARE_ERROR(NotPSD);
BNK_DECLARE_ERROR(NonHurwitz);
BNK_DECLARE_ERROR(DomainError);
BNK_DECLARE_ERROR(NonPSDCavity);
BNK_DECLARE_ERROR(SingularScaling);
BNK_DECLARE_ERROR(ModeUnsupported);
BNK_DECLARE_ERROR(Unsupported);
BNK_DECLARE_ERROR(ParseError);
BNK_DECLARE_ERROR(ConfigError);
BNK_DECLARE_ERROR(DimensionOverflow);

#undef BNK_DECLARE_ERROR

}  // namespace bnk
