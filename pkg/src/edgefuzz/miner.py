"""Mine check-macro invocations out of native (C/C++) source trees.

The miner never parses C++ properly. It blanks comments, string literals and
preprocessor directives, then walks braces and parentheses to recover function
bodies and their headers. Check macros are syntactically regular, which is all
the downstream stages need.
"""

from __future__ import annotations

import bisect
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

log = logging.getLogger(__name__)

DEFAULT_MACROS = frozenset({"TORCH_CHECK", "AT_CHECK"})
DEFAULT_EXTENSIONS = frozenset({".cpp", ".cc", ".cu", ".h", ".hpp", ".cuh"})

_MACRO_NAME = re.compile(r"^[A-Z_][A-Z0-9_]*$")
_NON_NAME_KEYWORDS = {
    "if", "for", "while", "switch", "catch", "return", "sizeof", "decltype",
    "alignas", "alignof", "__attribute__", "__declspec", "noexcept", "static_assert",
}
_TRAILING_OK = re.compile(
    r"^(\s|const\b|override\b|final\b|volatile\b|noexcept\b|&&?|->[^{]*|noexcept\s*\([^)]*\))*$"
)


@dataclass(frozen=True)
class Param:
    name: str
    declared_type: str


@dataclass(frozen=True)
class FunctionInterface:
    name: str
    parameters: tuple[Param, ...]
    return_type: str
    source_span: tuple[int, int]
    header: str = ""
    ambiguous: bool = False

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.parameters)


@dataclass(frozen=True)
class CheckSite:
    file_path: str
    line: int
    macro_name: str
    raw_text: str
    enclosing_function: str


@dataclass(frozen=True)
class CheckBlock:
    interface: FunctionInterface
    checks: tuple[CheckSite, ...]
    block_text: str
    file_path: str = ""


@dataclass
class MinerWarning:
    file_path: str
    line: int
    message: str


# --------------------------------------------------------------------------
# lexing


@dataclass
class _Lexed:
    source: str
    code: str  # comments, string contents and directives blanked
    nocomment: str  # comments and directives blanked, strings kept
    line_starts: list[int] = field(default_factory=list)

    def line_of(self, offset: int) -> int:
        return bisect.bisect_right(self.line_starts, offset)


def _blank(chars: list[str], start: int, end: int) -> None:
    for k in range(start, end):
        if chars[k] != "\n":
            chars[k] = " "


def lex(source: str) -> _Lexed:
    """Blank comments, literals and preprocessor lines, preserving offsets."""
    code = list(source)
    nocomment = list(source)
    n = len(source)
    i = 0
    at_line_start = True
    while i < n:
        c = source[i]
        if c == "\n":
            at_line_start = True
            i += 1
            continue
        if c in " \t\r\f\v":
            i += 1
            continue
        if at_line_start and c == "#":
            j = i
            while j < n:
                if source[j] == "\n" and source[j - 1] != "\\":
                    break
                j += 1
            _blank(code, i, j)
            _blank(nocomment, i, j)
            i = j
            continue
        at_line_start = False
        nxt = source[i + 1] if i + 1 < n else ""
        if c == "/" and nxt == "/":
            j = source.find("\n", i)
            j = n if j < 0 else j
            _blank(code, i, j)
            _blank(nocomment, i, j)
            i = j
        elif c == "/" and nxt == "*":
            j = source.find("*/", i + 2)
            j = n if j < 0 else j + 2
            _blank(code, i, j)
            _blank(nocomment, i, j)
            i = j
        elif c == "R" and nxt == '"' and (i == 0 or not (source[i - 1].isalnum() or source[i - 1] == "_")):
            m = re.match(r'R"([^()\\\s]{0,16})\(', source[i:])
            if not m:
                i += 1
                continue
            close = ")" + m.group(1) + '"'
            j = source.find(close, i + m.end())
            j = n if j < 0 else j + len(close)
            _blank(code, i + 2, j - 1)
            i = j
        elif c in "\"'":
            if c == "'" and i > 0 and source[i - 1].isalnum():
                i += 1  # digit separator such as 1'000
                continue
            j = i + 1
            while j < n and source[j] != c and source[j] != "\n":
                j += 2 if source[j] == "\\" else 1
            j = min(j, n - 1)
            _blank(code, i + 1, j)
            i = j + 1
        else:
            i += 1
    starts = [0] + [m.end() for m in re.finditer("\n", source)]
    return _Lexed(source, "".join(code), "".join(nocomment), starts)


def _match_close(text: str, open_idx: int, opener: str = "(", closer: str = ")") -> int:
    """Index of the bracket closing text[open_idx], or -1."""
    depth = 0
    for k in range(open_idx, len(text)):
        ch = text[k]
        if ch == opener:
            depth += 1
        elif ch == closer:
            depth -= 1
            if depth == 0:
                return k
    return -1


def _split_top_level(text: str, sep: str = ",") -> list[str]:
    parts, depth, start = [], 0, 0
    for k, ch in enumerate(text):
        if ch in "([{<":
            depth += 1
        elif ch in ")]}>":
            depth = max(0, depth - 1)
        elif ch == sep and depth == 0:
            parts.append(text[start:k])
            start = k + 1
    parts.append(text[start:])
    return parts


def _collapse(text: str) -> str:
    return re.sub(r"\(\s+", "(", " ".join(text.split())).replace(" )", ")")


# --------------------------------------------------------------------------
# header parsing


def _paren_groups(header: str) -> list[tuple[int, int]]:
    groups = []
    k = 0
    while k < len(header):
        if header[k] == "(":
            end = _match_close(header, k)
            if end < 0:
                break
            groups.append((k, end))
            k = end + 1
        else:
            k += 1
    return groups


def parse_header(header_code: str, header_display: str | None = None) -> tuple[str, list[Param], str, bool]:
    """Split a function header into (name, params, return_type, ambiguous).

    ``header_code`` must have literals blanked; ``header_display`` is the same
    span with literals intact and is used for declared types.
    """
    display = header_display if header_display is not None else header_code
    groups = _paren_groups(header_code)
    for gi, (start, end) in enumerate(groups):
        before = header_code[:start].rstrip()
        m = re.search(r"((?:[A-Za-z_~][\w]*\s*::\s*)*(?:operator\s*\S+|~?[A-Za-z_]\w*))$", before)
        if not m:
            continue
        ident = _collapse(m.group(1)).replace(" ", "")
        last = ident.split("::")[-1]
        if last in _NON_NAME_KEYWORDS:
            continue
        params_span = (start, end)
        name = ident
        if _MACRO_NAME.match(last) and gi + 1 < len(groups):
            nstart, nend = groups[gi + 1]
            if header_code[end + 1:nstart].strip() == "":
                name = _collapse(header_code[start + 1:end])
                params_span = (nstart, nend)
        rest = header_code[params_span[1] + 1:]
        ambiguous = False
        if not _TRAILING_OK.match(rest):
            stripped = rest.lstrip()
            if not (stripped.startswith(":") and not stripped.startswith("::")):
                ambiguous = True
        return_type = _collapse(display[: m.start()]) if name == ident else _collapse(display[: m.start()]) or last
        params, bad = _parse_params(header_code[params_span[0] + 1:params_span[1]],
                                    display[params_span[0] + 1:params_span[1]])
        return name, params, return_type, ambiguous or bad
    return "", [], "", True


def _parse_params(code: str, display: str) -> tuple[list[Param], bool]:
    if not code.strip() or code.strip() == "void":
        return [], False
    params: list[Param] = []
    ambiguous = False
    offset = 0
    for chunk in _split_top_level(code):
        disp = display[offset:offset + len(chunk)]
        offset += len(chunk) + 1
        eq = _split_top_level(chunk, "=")
        decl = eq[0]
        decl_disp = disp[: len(decl)]
        m = re.search(r"([A-Za-z_]\w*)\s*(\[[^\]]*\])?\s*$", decl)
        type_part = decl[: m.start()].strip() if m else ""
        if not m or not type_part or type_part.endswith("::") or decl.strip() == "...":
            ambiguous = True
            continue
        params.append(Param(m.group(1), _collapse(decl_disp[: m.start()])))
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        ambiguous = True
    return params, ambiguous


# --------------------------------------------------------------------------
# structure walk


@dataclass
class _Function:
    interface: FunctionInterface
    qualified_name: str
    header_start: int
    body_open: int
    body_close: int


def _classify_scope(header: str) -> tuple[str, str]:
    h = re.sub(r"^(?:(public|private|protected)\s*:\s*)+", "", header.strip())
    if re.match(r"^(inline\s+)?namespace\b", h):
        m = re.match(r"^(?:inline\s+)?namespace\s+([\w:]+)", h)
        return "namespace", m.group(1) if m else ""
    if re.match(r'^extern\s*"', h):
        return "namespace", ""
    if "(" not in h or re.match(r"^(template\s*<[^>]*>\s*)?(class|struct|union)\b", h):
        m = re.match(r"^(?:template\s*<[^>]*>\s*)?(class|struct|union)\s+(?:\w+\s+)*?([A-Za-z_]\w*)\s*(?:final\s*)?(?::|$)", h)
        if m:
            return "class", m.group(2)
        return "other", ""
    if re.search(r"\benum\b", h.split("(")[0]):
        return "other", ""
    if "=" in h.split("(")[0] and not re.search(r"\boperator\s*\S*=", h):
        return "other", ""
    return "function", ""


def _walk(lexed: _Lexed) -> list[_Function]:
    code = lexed.code
    functions: list[_Function] = []
    # frame: [kind, name, open_idx, decl_start, paren_depth, header_start]
    stack: list[list] = [["global", "", -1, 0, 0, 0]]
    for k, ch in enumerate(code):
        top = stack[-1]
        if ch == "(":
            top[4] += 1
        elif ch == ")":
            top[4] = max(0, top[4] - 1)
        elif ch == ";" and top[4] == 0:
            top[3] = k + 1
        elif ch == "{":
            if top[0] in ("global", "namespace", "class") and top[4] == 0:
                header_start = top[3]
                acc = re.match(r"\s*(?:(?:public|private|protected)\s*:(?!:)\s*)*", code[header_start:k])
                header_start += acc.end()
                kind, name = _classify_scope(code[header_start:k])
                stack.append([kind, name, k, k + 1, 0, header_start])
            else:
                stack.append(["block", "", k, k + 1, 0, k])
        elif ch == "}":
            if len(stack) == 1:
                continue
            frame = stack.pop()
            if frame[0] == "function":
                header_start = frame[5]
                header_code = code[header_start:frame[2]]
                header_disp = lexed.nocomment[header_start:frame[2]]
                name, params, ret, ambiguous = parse_header(header_code, header_disp)
                scopes = [f[1] for f in stack if f[0] in ("namespace", "class") and f[1]]
                qualified = "::".join(scopes + [name]) if name else ""
                iface = FunctionInterface(
                    name=name,
                    parameters=tuple(params),
                    return_type=ret,
                    source_span=(lexed.line_of(header_start), lexed.line_of(k)),
                    header=_collapse(header_disp),
                    ambiguous=ambiguous or not name,
                )
                functions.append(_Function(iface, qualified, header_start, frame[2], k))
            stack[-1][3] = k + 1
    return functions


def _find_sites(lexed: _Lexed, macros: Iterable[str], start: int = 0, end: int | None = None,
                path: str = "", warnings: list[MinerWarning] | None = None) -> list[tuple[int, int, str]]:
    """(offset, close_offset, macro) for each balanced macro invocation."""
    names = sorted(set(macros))
    if not names:
        return []
    pattern = re.compile(r"(?<![\w.])(?<!::)(?<!->)(" + "|".join(map(re.escape, names)) + r")\s*\(")
    end = len(lexed.code) if end is None else end
    found = []
    for m in pattern.finditer(lexed.code, start, end):
        open_idx = m.end() - 1
        close = _match_close(lexed.code, open_idx)
        if close < 0:
            msg = f"unbalanced parentheses in {m.group(1)} invocation"
            log.warning("%s:%d: %s", path, lexed.line_of(m.start()), msg)
            if warnings is not None:
                warnings.append(MinerWarning(path, lexed.line_of(m.start()), msg))
            continue
        found.append((m.start(), close, m.group(1)))
    return found


def _strip_literals(text: str) -> str:
    return lex(text).code


def references_param(raw_text: str, names: Iterable[str]) -> bool:
    """True if any name occurs as a whole-word token outside literals.

    Member names (``x.self``, ``p->dim``, ``ns::input``) do not count.
    """
    code = _strip_literals(raw_text)
    for name in names:
        if re.search(r"(?<![\w.])(?<!::)(?<!->)" + re.escape(name) + r"\b", code):
            return True
    return False


def render_block(header: str, checks: Iterable[CheckSite]) -> str:
    lines = [header + " {"]
    for site in checks:
        parts = site.raw_text.splitlines()
        lines.append("  " + parts[0].strip() + ("" if len(parts) > 1 else ";"))
        for extra_idx, extra in enumerate(parts[1:], start=1):
            tail = ";" if extra_idx == len(parts) - 1 else ""
            lines.append("      " + extra.strip() + tail)
    lines.append("}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# public operations


def extract_block(function_text: str, interface: FunctionInterface, macros: Iterable[str],
                  file_path: str = "", first_line: int = 1, qualified_name: str | None = None) -> CheckBlock:
    """Reduce a function to its header plus the check macros in its body.

    ``first_line`` is the source line of ``function_text[0]``; site lines are
    reported in source coordinates.
    """
    lexed = lex(function_text)
    body = lexed.code.find("{")
    body = 0 if body < 0 else body
    qualified = qualified_name or interface.name
    sites = []
    for off, close, macro in _find_sites(lexed, macros, body, path=file_path):
        sites.append(CheckSite(
            file_path=file_path,
            line=lexed.line_of(off) + first_line - 1,
            macro_name=macro,
            raw_text=lexed.nocomment[off:close + 1],
            enclosing_function=qualified,
        ))
    header = interface.header or _collapse(lexed.nocomment[:body])
    return CheckBlock(interface, tuple(sites), render_block(header, sites), file_path)


def filter_param_checked(block: CheckBlock) -> CheckBlock:
    names = block.interface.param_names
    kept = tuple(s for s in block.checks if references_param(s.raw_text, names))
    if len(kept) == len(block.checks):
        return block
    header = block.interface.header or block.block_text.splitlines()[0].removesuffix(" {")
    return CheckBlock(block.interface, kept, render_block(header, kept), block.file_path)


def _source_files(root: Path, extensions: Iterable[str]) -> list[Path]:
    exts = {e if e.startswith(".") else "." + e for e in extensions}
    files = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for fname in sorted(filenames):
            if os.path.splitext(fname)[1] in exts:
                files.append(Path(dirpath) / fname)
    return sorted(files)


def _read(path: Path) -> str:
    return path.read_text(encoding="utf-8", errors="replace")


def _file_blocks(path: Path, rel: str, macros: frozenset[str],
                 warnings: list[MinerWarning]) -> tuple[list[CheckBlock], list[CheckSite]]:
    source = _read(path)
    lexed = lex(source)
    functions = _walk(lexed)
    blocks: list[CheckBlock] = []
    for fn in functions:
        # innermost function owns its sites
        inner = [g for g in functions if g is not fn and fn.body_open < g.header_start and g.body_close < fn.body_close]
        text = source[fn.header_start:fn.body_close + 1]
        block = extract_block(text, fn.interface, macros, rel, fn.interface.source_span[0], fn.qualified_name)
        if inner:
            keep = tuple(s for s in block.checks
                         if not any(g.interface.source_span[0] <= s.line <= g.interface.source_span[1] for g in inner))
            block = CheckBlock(block.interface, keep, render_block(fn.interface.header, keep), rel)
        blocks.append(block)
    claimed = {(s.line, s.raw_text) for b in blocks for s in b.checks}
    sites = [s for b in blocks for s in b.checks]
    for off, close, macro in _find_sites(lexed, macros, path=rel, warnings=warnings):
        if (lexed.line_of(off), lexed.nocomment[off:close + 1]) not in claimed:
            msg = f"{macro} invocation outside any function body; skipped"
            log.warning("%s:%d: %s", rel, lexed.line_of(off), msg)
            warnings.append(MinerWarning(rel, lexed.line_of(off), msg))
    return blocks, sites


def _scan(root: Path, macros: Iterable[str], extensions: Iterable[str], workers: int,
          warnings: list[MinerWarning] | None) -> list[tuple[list[CheckBlock], list[CheckSite]]]:
    root = Path(root)
    if not root.is_dir():
        raise OSError(f"source root {root} is not a readable directory")
    macro_set = frozenset(macros)
    if not macro_set:
        raise ValueError("at least one check macro is required")
    files = _source_files(root, extensions)
    per_file: list[list[MinerWarning]] = [[] for _ in files]

    def one(idx: int):
        rel = files[idx].relative_to(root).as_posix()
        return _file_blocks(files[idx], rel, macro_set, per_file[idx])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(len(files))))
    else:
        results = [one(i) for i in range(len(files))]
    if warnings is not None:
        for w in per_file:
            warnings.extend(w)
    return results


def scan_sources(root: str | Path, macros: Iterable[str] = DEFAULT_MACROS,
                 extensions: Iterable[str] = DEFAULT_EXTENSIONS, workers: int = 1,
                 warnings: list[MinerWarning] | None = None) -> list[CheckSite]:
    """Every check-macro invocation under root, ordered by (path, line)."""
    results = _scan(Path(root), macros, extensions, workers, warnings)
    sites = [s for _, file_sites in results for s in file_sites]
    return sorted(sites, key=lambda s: (s.file_path, s.line, s.raw_text))


def mine_blocks(root: str | Path, macros: Iterable[str] = DEFAULT_MACROS,
                extensions: Iterable[str] = DEFAULT_EXTENSIONS, workers: int = 1,
                warnings: list[MinerWarning] | None = None,
                filter_params: bool = True) -> list[CheckBlock]:
    """Check-related code blocks for every unambiguous function with checks."""
    results = _scan(Path(root), macros, extensions, workers, warnings)
    blocks = []
    for file_blocks, _ in results:
        for block in file_blocks:
            if not block.checks:
                continue
            if block.interface.ambiguous:
                msg = f"ambiguous header for {block.interface.name or '<unknown>'}; excluded"
                log.warning("%s:%d: %s", block.file_path, block.interface.source_span[0], msg)
                if warnings is not None:
                    warnings.append(MinerWarning(block.file_path, block.interface.source_span[0], msg))
                continue
            if filter_params:
                block = filter_param_checked(block)
                if not block.checks:
                    continue
            blocks.append(block)
    return sorted(blocks, key=lambda b: (b.file_path, b.interface.source_span[0]))


# --------------------------------------------------------------------------
# JSONL


def block_to_dict(block: CheckBlock) -> dict:
    return {
        "function": block.checks[0].enclosing_function if block.checks else block.interface.name,
        "file": block.file_path,
        "span": list(block.interface.source_span),
        "params": [{"name": p.name, "type": p.declared_type} for p in block.interface.parameters],
        "checks": [{"line": s.line, "macro": s.macro_name, "text": s.raw_text} for s in block.checks],
        "block_text": block.block_text,
    }


def block_from_dict(record: dict) -> CheckBlock:
    params = tuple(Param(p["name"], p["type"]) for p in record["params"])
    lines = record["block_text"].splitlines()
    header = lines[0].removesuffix(" {") if lines else ""
    function = record["function"]
    iface = FunctionInterface(
        name=function.split("::")[-1],
        parameters=params,
        return_type="",
        source_span=(int(record["span"][0]), int(record["span"][1])),
        header=header,
    )
    checks = tuple(
        CheckSite(record["file"], int(c["line"]), c["macro"], c["text"], function) for c in record["checks"]
    )
    return CheckBlock(iface, checks, record["block_text"], record["file"])
