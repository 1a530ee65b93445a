import string

import pytest
from hypothesis import given, strategies as st

from codesearch.lexing import (
    TokenKind,
    TypedToken,
    available_languages,
    classify_token,
    classify_tokens,
    keyword_profile,
)


def kinds(tokens, language="python"):
    return [t.kind for t in classify_tokens(tokens, language)]


class TestRuleTable:
    def test_python_snippet(self):
        assert kinds(["def", "foo", "(", "x", ")"]) == [
            TokenKind.KEYWORD,
            TokenKind.IDENTIFIER,
            TokenKind.PUNCTUATION,
            TokenKind.IDENTIFIER,
            TokenKind.PUNCTUATION,
        ]

    def test_pure_operator(self):
        assert kinds(["=="]) == [TokenKind.OPERATOR]

    def test_literals(self):
        assert kinds(['"hi"', "42"]) == [TokenKind.STRING_LITERAL, TokenKind.NUMBER_LITERAL]

    @pytest.mark.parametrize(
        "token,kind",
        [
            ("'x'", TokenKind.STRING_LITERAL),
            ("`tick`", TokenKind.STRING_LITERAL),
            ("3.14", TokenKind.NUMBER_LITERAL),
            (".5", TokenKind.NUMBER_LITERAL),
            ("0xFF", TokenKind.NUMBER_LITERAL),
            ("+=", TokenKind.OPERATOR),
            ("?:", TokenKind.OPERATOR),
            ("{", TokenKind.PUNCTUATION),
            (";", TokenKind.PUNCTUATION),
            (".", TokenKind.PUNCTUATION),
            ("_private", TokenKind.IDENTIFIER),
            ("x+", TokenKind.IDENTIFIER),  # mixed token: first matching rule wins
            ("@decorator", TokenKind.OTHER),
            ("-42", TokenKind.OTHER),
        ],
    )
    def test_pattern_rules(self, token, kind):
        assert kinds([token])[0] == kind

    def test_java_keywords(self):
        assert kinds(["public", "static", "void"], "java") == [TokenKind.KEYWORD] * 3

    def test_keyword_is_language_specific(self):
        assert kinds(["public"], "python") == [TokenKind.IDENTIFIER]


class TestProfiles:
    def test_shipped_languages(self):
        assert {"python", "java"} <= set(available_languages())

    def test_unknown_language_warns_and_falls_back(self, caplog):
        with caplog.at_level("WARNING"):
            out = classify_tokens(["def"], "klingon")
        assert out[0].kind == TokenKind.IDENTIFIER
        assert any("generic" in rec.message for rec in caplog.records)

    def test_profile_is_cached_and_frozen(self):
        assert keyword_profile("python") is keyword_profile("python")
        assert "def" in keyword_profile("python")


class TestProperties:
    @given(st.lists(st.text(alphabet=string.printable.strip(), min_size=1, max_size=8), min_size=1, max_size=20))
    def test_totality_and_length(self, tokens):
        out = classify_tokens(tokens, "python")
        assert len(out) == len(tokens)
        assert all(isinstance(t.kind, TokenKind) for t in out)

    @given(st.text(alphabet=string.printable.strip(), min_size=1, max_size=10))
    def test_determinism(self, token):
        assert classify_tokens([token], "java") == classify_tokens([token], "java")

    def test_language_monotonicity(self):
        # tokens that are keywords under a profile degrade to
        # identifier-or-other under the generic profile, never to
        # operator or literal kinds
        for language in ("python", "java"):
            for word in keyword_profile(language):
                generic = classify_token(word, frozenset())
                assert generic in (TokenKind.IDENTIFIER, TokenKind.OTHER)

    def test_empty_token_rejected(self):
        with pytest.raises(ValueError):
            classify_tokens([""], "python")
        with pytest.raises(ValueError):
            TypedToken(text="", kind=TokenKind.OTHER)
