import unicodedata

import numpy as np
import pytest

from dialogkit.config import Settings
from dialogkit.errors import ConfigError, TextEncodingError, ValidationError
from dialogkit.segio import SpeakerWordStream, TimedWord
from dialogkit.tcpwer import compute_tcpwer
from dialogkit.textprep import (
    DEFAULT_PROFILE,
    NormalizationProfile,
    load_profile,
    normalize,
    normalize_punct,
    normalize_unicode,
)

NUKTA = "\u093c"
# precomposed nukta letters and their canonical base consonants
NUKTA_LETTERS = {
    "\u0958": "\u0915",
    "\u0959": "\u0916",
    "\u095a": "\u0917",
    "\u095b": "\u091c",
    "\u095c": "\u0921",
    "\u095d": "\u0922",
    "\u095e": "\u092b",
    "\u095f": "\u092f",
}


@pytest.fixture
def period_profile():
    """Dandas become sentence periods"""
    return NormalizationProfile(danda_policy="period")


@pytest.mark.parametrize("precomposed,base", sorted(NUKTA_LETTERS.items()))
def test_nukta_letters_decompose(precomposed, base):
    """Composition-excluded nukta letters end up as base + nukta"""
    assert normalize_unicode(precomposed) == base + NUKTA
    assert normalize_unicode(base + NUKTA) == base + NUKTA


def test_ascii_unchanged():
    """Plain ASCII passes through"""
    assert normalize_unicode("fever since 3 days") == "fever since 3 days"


def test_normalize_unicode_accepts_bytes():
    """UTF-8 bytes are decoded before normalization"""
    assert normalize_unicode("\u0958".encode('utf-8')) == "\u0915" + NUKTA


def test_invalid_encodings_rejected():
    """Bad bytes and lone surrogates are encoding errors"""
    with pytest.raises(TextEncodingError):
        normalize_unicode(b"\xc3\x28")
    with pytest.raises(TextEncodingError):
        normalize_unicode("abc\ud800")


def test_unknown_form_rejected():
    """Only canonical forms are supported"""
    with pytest.raises(ValidationError):
        normalize_unicode("x", "NFKC")
    with pytest.raises(ValidationError):
        NormalizationProfile(unicode_form="NFKD")


def test_danda_stripped_by_default():
    """The default profile removes dandas"""
    assert normalize_punct("ठीक है।") == "ठीक है"
    assert normalize_punct("बस॥ ठीक") == "बस ठीक"


def test_danda_mapped_to_period(period_profile):
    """The period policy rewrites dandas and keeps periods"""
    assert normalize_punct("ठीक है।", period_profile) == "ठीक है."
    assert normalize_punct("done. next॥", period_profile) == "done. next."
    assert normalize_punct("a, b!", period_profile) == "a b"


def test_ascii_punctuation_and_whitespace():
    """Punctuation is removed and whitespace runs collapse"""
    assert normalize_punct("a ,  b !!") == "a b"
    assert normalize_punct("  \tfever\n\ncough ") == "fever cough"


def test_whitespace_collapse_can_be_disabled():
    """Without collapsing, inner whitespace survives"""
    profile = NormalizationProfile(collapse_whitespace=False)
    assert normalize_punct("a  b", profile) == "a  b"


def test_normalize_is_idempotent_on_random_devanagari():
    """Applying normalize twice equals applying it once"""
    rng = np.random.default_rng(12)
    alphabet = [chr(c) for c in range(0x0900, 0x0980)] + [" ", "  ", ",", ".", "।", "a"]
    for _ in range(10_000):
        text = "".join(rng.choice(alphabet, size=int(rng.integers(0, 25))))
        once = normalize(text)
        assert normalize(once) == once
        assert unicodedata.is_normalized("NFC", once)


def _devanagari_letters(text):
    """Letters of the Devanagari block, counted in canonical decomposition"""
    return sum(1 for ch in unicodedata.normalize("NFD", text)
               if "\u0900" <= ch <= "\u097f" and unicodedata.category(ch) == "Lo")


def test_normalize_keeps_devanagari_letter_count():
    """Normalization changes encodings and punctuation but never the number of letters"""
    rng = np.random.default_rng(41)
    alphabet = [chr(c) for c in range(0x0900, 0x0980)]
    alphabet += [" ", ",", "?", "\u0964", "\u0965", "a", "\u200d"]
    profiles = [DEFAULT_PROFILE, NormalizationProfile(unicode_form="NFD"),
                NormalizationProfile(danda_policy="period")]
    for _ in range(2000):
        text = "".join(rng.choice(alphabet, size=int(rng.integers(0, 30))))
        for profile in profiles:
            assert _devanagari_letters(normalize(text, profile)) == _devanagari_letters(text)


def test_normalized_text_unchanged():
    """Already-normalized text is a fixed point"""
    text = "मरीज़ को बुखार है"
    assert normalize(text) == normalize(normalize(text))
    assert normalize("fever cough") == "fever cough"


def test_alternate_encodings_score_equal():
    """Precomposed and decomposed spellings score zero tcpWER after normalization"""
    precomposed = "\u095c\u093e"
    decomposed = "\u0921\u093c\u093e"
    ref = [SpeakerWordStream("A", [TimedWord(precomposed, 0.0, 1.0, "A")])]
    hyp = [SpeakerWordStream("A", [TimedWord(decomposed, 0.0, 1.0, "A")])]
    assert compute_tcpwer(ref, hyp).substitutions == 1
    assert compute_tcpwer(ref, hyp, normalizer=normalize).tcpwer == 0.0


def test_profile_from_settings():
    """Profile keys adjust the punctuation inventory"""
    settings = Settings({"EXTRA_PUNCTUATION": "«»", "KEEP_PUNCTUATION": "-",
                         "DANDA_POLICY": "Period"})
    profile = NormalizationProfile.from_settings(settings)
    assert profile.danda_policy == "period"
    assert "-" not in profile.punctuation
    assert normalize("well-known «x»", profile) == "well-known x"


def test_profile_unknown_key():
    """Unrecognized profile keys are configuration errors"""
    with pytest.raises(ConfigError):
        NormalizationProfile.from_settings(Settings({"STRIP_DIGITS": "1"}))


def test_load_profile(tmp_path):
    """Profiles load from KEY=value files"""
    path = tmp_path / "profile.env"
    path.write_text("UNICODE_FORM=nfd\nCOLLAPSE_WHITESPACE=false\n", encoding='utf-8')
    profile = load_profile(path)
    assert profile.unicode_form == "NFD"
    assert profile.collapse_whitespace is False
    assert DEFAULT_PROFILE.unicode_form == "NFC"
