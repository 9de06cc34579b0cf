"""
Unicode and punctuation normalization for Devanagari / Latin code-switched text
"""
import re
import string
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import FrozenSet, Optional, Union

import structlog

from .config import Settings
from .errors import TextEncodingError, ValidationError

logger = structlog.get_logger(__name__)

DANDA = "\u0964"
DOUBLE_DANDA = "\u0965"
DANDAS = frozenset({DANDA, DOUBLE_DANDA})
DEFAULT_PUNCTUATION = frozenset(string.punctuation) | DANDAS

UNICODE_FORMS = ("NFC", "NFD")
DANDA_POLICIES = ("strip", "period")

_WHITESPACE = re.compile(r"\s+")


@dataclass(frozen=True)
class NormalizationProfile:
    unicode_form: str = "NFC"
    punctuation: FrozenSet[str] = DEFAULT_PUNCTUATION
    collapse_whitespace: bool = True
    danda_policy: str = "strip"

    KEYS = ("UNICODE_FORM", "PUNCTUATION", "EXTRA_PUNCTUATION", "KEEP_PUNCTUATION",
            "COLLAPSE_WHITESPACE", "DANDA_POLICY")

    def __post_init__(self):
        if self.unicode_form not in UNICODE_FORMS:
            raise ValidationError(f"unicode_form must be one of {UNICODE_FORMS}, got {self.unicode_form!r}")
        if self.danda_policy not in DANDA_POLICIES:
            raise ValidationError(
                f"danda_policy must be one of {DANDA_POLICIES}, got {self.danda_policy!r}"
            )
        object.__setattr__(self, 'punctuation', frozenset(self.punctuation))

    @property
    def stripped(self) -> FrozenSet[str]:
        """Code points removed outright (dandas are governed by danda_policy)"""
        removed = self.punctuation - DANDAS
        if self.danda_policy == "period":
            return removed - {"."}
        return removed | DANDAS

    @classmethod
    def from_settings(cls, settings: Settings) -> "NormalizationProfile":
        settings.check_keys(cls.KEYS)
        punctuation = settings.get_str("PUNCTUATION")
        marks = frozenset(punctuation) if punctuation else DEFAULT_PUNCTUATION
        marks |= frozenset(settings.get_str("EXTRA_PUNCTUATION", ""))
        marks -= frozenset(settings.get_str("KEEP_PUNCTUATION", ""))
        return cls(
            unicode_form=settings.get_str("UNICODE_FORM", "NFC").upper(),
            punctuation=marks,
            collapse_whitespace=settings.get_bool("COLLAPSE_WHITESPACE", True),
            danda_policy=settings.get_str("DANDA_POLICY", "strip").lower(),
        )


DEFAULT_PROFILE = NormalizationProfile()


def load_profile(path: Union[str, Path]) -> NormalizationProfile:
    profile = NormalizationProfile.from_settings(Settings.from_file(path))
    logger.debug("profile_loaded", path=str(path), form=profile.unicode_form,
                 danda_policy=profile.danda_policy)
    return profile


def normalize_unicode(text: Union[str, bytes], form: str = "NFC") -> str:
    """
    Canonical normalization (composition by default).

    Precomposed nukta letters U+0958..U+095F are composition exclusions, so
    under NFC they decompose to base + U+093C and both spellings converge.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode('utf-8')
        except UnicodeDecodeError as e:
            raise TextEncodingError(f"Input is not valid UTF-8: {e}")
    try:
        text.encode('utf-8')
    except UnicodeEncodeError as e:
        raise TextEncodingError(f"Input contains unpaired surrogates: {e}")
    if form not in UNICODE_FORMS:
        raise ValidationError(f"Unknown unicode form {form!r}")
    return unicodedata.normalize(form, text)


def normalize_punct(text: str, profile: NormalizationProfile = DEFAULT_PROFILE) -> str:
    """Remove profile punctuation, apply the danda policy, tidy whitespace"""
    if profile.danda_policy == "period":
        text = text.replace(DOUBLE_DANDA, ".").replace(DANDA, ".")
    stripped = profile.stripped
    text = "".join(ch for ch in text if ch not in stripped)
    if profile.collapse_whitespace:
        text = _WHITESPACE.sub(" ", text)
    return text.strip()


def normalize(text: Union[str, bytes], profile: Optional[NormalizationProfile] = None) -> str:
    """normalize_unicode then normalize_punct"""
    profile = profile or DEFAULT_PROFILE
    cleaned = normalize_punct(normalize_unicode(text, profile.unicode_form), profile)
    # removing marks can leave combining sequences that recompose
    return unicodedata.normalize(profile.unicode_form, cleaned)
