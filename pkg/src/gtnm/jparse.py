"""Declaration-level Java parsing and context extraction.

This is not a full Java front end. A small lexer feeds a brace-matching
member parser that recovers packages, imports, type declarations, method
signatures, Javadoc, body identifiers and call sites. Anything it cannot
understand it skips; a file is only dropped when the source is beyond
recovery, and then with a diagnostic on stderr.

Four context views are derived from the parse:

* local      -- return type, parameter types/names, body identifiers
* in-file    -- names of the other methods declared in the same file
* cross-file -- method names of imported or inherited types found in the
                project index
* doc        -- the first sentence of the method's Javadoc

Nested and anonymous types are handled by attribution: their methods count
as members of the enclosing top-level type, and their tokens never leak
into an enclosing method's identifier list.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)

JAVA_KEYWORDS = {
    "abstract", "assert", "boolean", "break", "byte", "case", "catch", "char",
    "class", "const", "continue", "default", "do", "double", "else", "enum",
    "extends", "final", "finally", "float", "for", "goto", "if", "implements",
    "import", "instanceof", "int", "interface", "long", "native", "new",
    "package", "private", "protected", "public", "return", "short", "static",
    "strictfp", "super", "switch", "synchronized", "this", "throw", "throws",
    "transient", "try", "void", "volatile", "while",
}

# Literal words are excluded from body identifiers just like keywords.
LITERAL_WORDS = {"true", "false", "null"}

MODIFIER_KEYWORDS = {
    "public", "private", "protected", "static", "final", "abstract", "native",
    "synchronized", "strictfp", "transient", "volatile", "default",
}

PRIMITIVE_TYPES = {"boolean", "byte", "char", "short", "int", "long", "float", "double"}

KW = "kw"
IDENT = "ident"
NUM = "num"
STR = "str"
CHAR = "char"
PUNCT = "punct"


@dataclass
class Tok:
    kind: str
    text: str
    line: int


@dataclass
class Comment:
    attach: int  # index of the next significant token
    text: str
    block: bool
    line: int


@dataclass
class Param:
    type: str
    name: str


@dataclass
class MethodDecl:
    name: str
    return_type: str  # "" for constructors; "void" stays literal
    params: list[Param] = field(default_factory=list)
    body_identifiers: list[str] = field(default_factory=list)
    callees: set[str] = field(default_factory=set)
    javadoc: str | None = None
    line: int = 0
    end_line: int = 0
    is_ctor: bool = False
    has_body: bool = False
    decl_index: int = 0  # token index of the declaration, fixes source order


@dataclass
class TypeDecl:
    name: str
    kind: str = "class"
    super_name: str | None = None
    methods: list[MethodDecl] = field(default_factory=list)
    line: int = 0


@dataclass
class ImportDecl:
    name: str
    wildcard: bool = False
    static: bool = False


@dataclass
class FileModel:
    path: str
    package: str = ""
    imports: list[ImportDecl] = field(default_factory=list)
    type_decls: list[TypeDecl] = field(default_factory=list)

    def methods(self) -> list[MethodDecl]:
        out = [m for t in self.type_decls for m in t.methods]
        out.sort(key=lambda m: m.decl_index)
        return out


@dataclass
class ProjectIndex:
    root: str
    files: list[FileModel] = field(default_factory=list)
    type_table: dict[str, TypeDecl] = field(default_factory=dict)
    type_paths: dict[str, str] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# lexer


def _lex(text: str) -> tuple[list[Tok], list[Comment]]:
    toks: list[Tok] = []
    comments: list[Comment] = []
    i = 0
    n = len(text)
    line = 1
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            i += 1
            continue
        if ch.isspace():
            i += 1
            continue
        if ch == "/" and i + 1 < n:
            nxt = text[i + 1]
            if nxt == "/":
                j = text.find("\n", i)
                if j < 0:
                    j = n
                comments.append(Comment(len(toks), text[i:j], False, line))
                i = j
                continue
            if nxt == "*":
                j = text.find("*/", i + 2)
                end = n if j < 0 else j + 2
                chunk = text[i:end]
                comments.append(Comment(len(toks), chunk, True, line))
                line += chunk.count("\n")
                i = end
                continue
        if ch == '"':
            if text.startswith('"""', i):
                j = text.find('"""', i + 3)
                end = n if j < 0 else j + 3
            else:
                j = i + 1
                while j < n and text[j] != '"':
                    if text[j] == "\\":
                        j += 1
                    elif text[j] == "\n":
                        break  # unterminated; recover at line end
                    j += 1
                end = min(j + 1, n)
            chunk = text[i:end]
            toks.append(Tok(STR, chunk, line))
            line += chunk.count("\n")
            i = end
            continue
        if ch == "'":
            j = i + 1
            while j < n and text[j] != "'":
                if text[j] == "\\":
                    j += 1
                elif text[j] == "\n":
                    break
                j += 1
            end = min(j + 1, n)
            toks.append(Tok(CHAR, text[i:end], line))
            i = end
            continue
        if ch.isdigit():
            j = i + 1
            while j < n:
                c = text[j]
                if c.isalnum() or c == "_":
                    j += 1
                elif c == "." and j + 1 < n and (text[j + 1].isdigit() or text[j + 1] in "fFdD"):
                    j += 1
                elif c in "+-" and text[j - 1] in "eEpP":
                    j += 1
                else:
                    break
            toks.append(Tok(NUM, text[i:j], line))
            i = j
            continue
        if ch.isalpha() or ch in "_$":
            j = i + 1
            while j < n and (text[j].isalnum() or text[j] in "_$"):
                j += 1
            word = text[i:j]
            if word in JAVA_KEYWORDS or word in LITERAL_WORDS:
                toks.append(Tok(KW, word, line))
            else:
                toks.append(Tok(IDENT, word, line))
            i = j
            continue
        toks.append(Tok(PUNCT, ch, line))
        i += 1
    return toks, comments


# ---------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, path: str, text: str):
        self.path = path
        self.toks, self.comments = _lex(text)
        self.i = 0
        self.model = FileModel(path=path)

    # -- token helpers

    def _cur(self) -> Tok | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def _peek(self, k: int = 1) -> Tok | None:
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else None

    def _at(self, kind: str, text: str | None = None) -> bool:
        t = self._cur()
        return t is not None and t.kind == kind and (text is None or t.text == text)

    def _advance(self) -> Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def _javadoc_before(self, tok_index: int) -> str | None:
        doc = None
        for c in self.comments:
            if c.attach > tok_index:
                break
            if c.attach == tok_index and c.block:
                doc = c.text
        return doc

    # -- compilation unit

    def parse(self) -> FileModel:
        while self._cur() is not None:
            t = self._cur()
            if t.kind == PUNCT and t.text == ";":
                self._advance()
            elif t.kind == PUNCT and t.text == "@":
                if self._peek() is not None and self._peek().kind == KW and self._peek().text == "interface":
                    self._advance()  # '@'; the decl parser sees 'interface'
                    self._parse_type_decl(top_level=True)
                else:
                    self._skip_annotation()
            elif t.kind == KW and t.text == "package":
                self._advance()
                self.model.package = self._read_dotted()
                self._skip_past_semicolon()
            elif t.kind == KW and t.text == "import":
                self._advance()
                self._parse_import()
            elif t.kind == KW and t.text in ("class", "interface", "enum"):
                self._parse_type_decl(top_level=True)
            elif self._looks_like_record_decl():
                self._parse_type_decl(top_level=True)
            elif t.kind == KW and t.text in MODIFIER_KEYWORDS:
                self._advance()
            else:
                self._advance()  # recovery
        for td in self.model.type_decls:
            td.methods.sort(key=lambda m: m.decl_index)
        return self.model

    def _looks_like_record_decl(self) -> bool:
        t, n1, n2 = self._cur(), self._peek(1), self._peek(2)
        return (
            t is not None and t.kind == IDENT and t.text == "record"
            and n1 is not None and n1.kind == IDENT
            and n2 is not None and n2.kind == PUNCT and n2.text in "(<"
        )

    def _parse_import(self) -> None:
        static = False
        if self._at(KW, "static"):
            static = True
            self._advance()
        parts: list[str] = []
        wildcard = False
        while True:
            t = self._cur()
            if t is None:
                break
            if t.kind == IDENT:
                parts.append(self._advance().text)
            elif t.kind == PUNCT and t.text == "*":
                wildcard = True
                self._advance()
            elif t.kind == PUNCT and t.text == ".":
                self._advance()
                continue
            else:
                break
        self._skip_past_semicolon()
        if parts:
            self.model.imports.append(ImportDecl(".".join(parts), wildcard, static))

    def _read_dotted(self) -> str:
        parts = []
        while self._at(IDENT):
            parts.append(self._advance().text)
            if self._at(PUNCT, ".") and self._peek() is not None and self._peek().kind == IDENT:
                self._advance()
            else:
                break
        return ".".join(parts)

    def _skip_past_semicolon(self) -> None:
        while self._cur() is not None and not self._at(PUNCT, ";"):
            self._advance()
        if self._cur() is not None:
            self._advance()

    def _skip_annotation(self) -> None:
        self._advance()  # '@'
        self._read_dotted()
        if self._at(PUNCT, "("):
            self._skip_balanced("(", ")")

    def _skip_balanced(self, open_ch: str, close_ch: str) -> None:
        depth = 0
        while self._cur() is not None:
            t = self._advance()
            if t.kind == PUNCT:
                if t.text == open_ch:
                    depth += 1
                elif t.text == close_ch:
                    depth -= 1
                    if depth == 0:
                        return

    def _skip_generics(self) -> str:
        # Called at '<'. Declaration headers never mix shifts with generics,
        # so plain angle counting is safe here.
        pieces = []
        depth = 0
        while self._cur() is not None:
            t = self._cur()
            if t.kind == PUNCT and t.text == "<":
                depth += 1
            elif t.kind == PUNCT and t.text == ">":
                depth -= 1
            elif t.kind == PUNCT and t.text in ";{}":
                break  # malformed; bail without consuming
            pieces.append(t.text)
            self._advance()
            if depth == 0:
                break
        return "".join(pieces)

    # -- type declarations

    def _parse_type_decl(self, top_level: bool, owner: TypeDecl | None = None) -> None:
        """Parse class/interface/enum/record starting at its keyword.

        Top-level types become TypeDecls; nested named types contribute their
        methods to `owner` instead.
        """
        kw = self._advance()
        kind = kw.text if kw.text in ("class", "interface", "enum", "record") else "class"
        if not self._at(IDENT):
            return
        name_tok = self._advance()
        td = TypeDecl(name=name_tok.text, kind=kind, line=name_tok.line)
        if self._at(PUNCT, "<"):
            self._skip_generics()
        if kind == "record" and self._at(PUNCT, "("):
            self._skip_balanced("(", ")")
        while self._cur() is not None and not self._at(PUNCT, "{"):
            t = self._cur()
            if t.kind == KW and t.text == "extends" and kind == "class":
                self._advance()
                td.super_name = self._read_dotted() or None
                if self._at(PUNCT, "<"):
                    self._skip_generics()
                continue
            if t.kind == PUNCT and t.text == ";":
                return  # degenerate declaration without a body
            self._advance()
        if self._cur() is None:
            return
        sink = owner if owner is not None else td
        self._advance()  # '{'
        if kind == "enum":
            self._parse_enum_constants(sink)
        self._parse_type_body(sink, simple_name=td.name)
        if top_level:
            self.model.type_decls.append(td)

    def _parse_enum_constants(self, sink: TypeDecl) -> None:
        while self._cur() is not None:
            t = self._cur()
            if t.kind == PUNCT and t.text == ";":
                self._advance()
                return
            if t.kind == PUNCT and t.text == "}":
                return  # body ends with the constant list; caller consumes '}'
            if t.kind == PUNCT and t.text == "@":
                self._skip_annotation()
                continue
            if t.kind == IDENT:
                self._advance()
                if self._at(PUNCT, "("):
                    self._skip_balanced("(", ")")
                if self._at(PUNCT, "{"):
                    self._advance()
                    self._parse_type_body(sink, simple_name="")
                continue
            if t.kind == PUNCT and t.text == ",":
                self._advance()
                continue
            self._advance()  # recovery

    def _parse_type_body(self, sink: TypeDecl, simple_name: str) -> None:
        """Parse members until the matching '}'; methods accumulate on sink."""
        while self._cur() is not None:
            if self._at(PUNCT, "}"):
                self._advance()
                return
            if self._at(PUNCT, ";"):
                self._advance()
                continue
            decl_index = self.i
            self._parse_member(sink, simple_name, decl_index)

    def _parse_member(self, sink: TypeDecl, simple_name: str, decl_index: int) -> None:
        start_i = self.i
        while self._cur() is not None:
            t = self._cur()
            if t.kind == PUNCT and t.text == "@":
                if self._peek() is not None and self._peek().kind == KW and self._peek().text == "interface":
                    self._advance()
                    self._parse_type_decl(top_level=False, owner=sink)
                    return
                self._skip_annotation()
            elif t.kind == KW and t.text in MODIFIER_KEYWORDS:
                self._advance()
            elif t.kind == IDENT and t.text in ("sealed", "non"):
                self._advance()  # sealed / non-sealed modifiers
            elif t.kind == PUNCT and t.text == "-" and self._peek() is not None and self._peek().text == "sealed":
                self._advance()
                self._advance()
            else:
                break
        t = self._cur()
        if t is None:
            return
        if t.kind == KW and t.text in ("class", "interface", "enum"):
            self._parse_type_decl(top_level=False, owner=sink)
            return
        if self._looks_like_record_decl():
            self._parse_type_decl(top_level=False, owner=sink)
            return
        if t.kind == PUNCT and t.text == "{":
            # static or instance initializer block
            self._scan_block(sink, collect_into=None)
            return
        if t.kind == PUNCT and t.text == "<":
            self._skip_generics()
        type_text = self._parse_type_ref()
        if type_text is None:
            self._advance()  # recovery
            return
        t = self._cur()
        if t is None:
            return
        if t.kind == PUNCT and t.text == "(":
            # constructor: the "type" we read was its name
            self._finish_method(sink, name=type_text, return_type="",
                                is_ctor=True, name_line=self.toks[start_i].line,
                                decl_index=decl_index, start_i=start_i)
            return
        if t.kind == PUNCT and t.text == "{" and type_text == simple_name:
            # compact record constructor
            m = MethodDecl(name=type_text, return_type="", is_ctor=True,
                           line=self.toks[start_i].line, decl_index=decl_index)
            m.javadoc = self._javadoc_before(start_i)
            m.has_body = True
            m.end_line = self._scan_block(sink, collect_into=m)
            sink.methods.append(m)
            return
        if t.kind == IDENT:
            name_tok = self._advance()
            nxt = self._cur()
            if nxt is not None and nxt.kind == PUNCT and nxt.text == "(":
                self._finish_method(sink, name=name_tok.text, return_type=type_text,
                                    is_ctor=False, name_line=name_tok.line,
                                    decl_index=decl_index, start_i=start_i)
                return
            # field declaration: consume to ';', attributing any anonymous bodies
            self._scan_statement_tail(sink)
            return
        self._advance()  # recovery

    def _finish_method(self, sink: TypeDecl, name: str, return_type: str, is_ctor: bool,
                       name_line: int, decl_index: int, start_i: int) -> None:
        m = MethodDecl(name=name, return_type=return_type, is_ctor=is_ctor,
                       line=name_line, decl_index=decl_index)
        m.javadoc = self._javadoc_before(start_i)
        m.params = self._parse_params()
        while self._cur() is not None and not (self._at(PUNCT, "{") or self._at(PUNCT, ";")):
            self._advance()  # throws clause, annotations on it, etc.
        if self._at(PUNCT, "{"):
            m.has_body = True
            m.end_line = self._scan_block(sink, collect_into=m)
        else:
            if self._cur() is not None:
                self._advance()  # ';' of an abstract/native declaration
            m.end_line = name_line
        sink.methods.append(m)

    def _parse_params(self) -> list[Param]:
        params: list[Param] = []
        if not self._at(PUNCT, "("):
            return params
        self._advance()
        while self._cur() is not None and not self._at(PUNCT, ")"):
            while self._at(PUNCT, "@"):
                self._skip_annotation()
            if self._at(KW, "final"):
                self._advance()
                continue
            type_text = self._parse_type_ref()
            if type_text is None:
                self._advance()
                continue
            while self._at(PUNCT, "."):
                self._advance()
                type_text += "."
            if self._at(IDENT):
                name = self._advance().text
                while self._at(PUNCT, "[") and self._peek() is not None and self._peek().text == "]":
                    self._advance()
                    self._advance()
                    type_text += "[]"
                if name != "this":
                    params.append(Param(type=type_text, name=name))
            elif self._at(KW, "this"):
                self._advance()  # receiver parameter
            if self._at(PUNCT, ","):
                self._advance()
        if self._cur() is not None:
            self._advance()  # ')'
        return params

    def _parse_type_ref(self) -> str | None:
        while self._at(PUNCT, "@"):
            self._skip_annotation()
        t = self._cur()
        if t is None:
            return None
        if t.kind == KW and (t.text in PRIMITIVE_TYPES or t.text == "void"):
            text = self._advance().text
        elif t.kind == IDENT:
            text = self._advance().text
            while self._at(PUNCT, ".") and self._peek() is not None and self._peek().kind == IDENT:
                self._advance()
                text += "." + self._advance().text
        else:
            return None
        if self._at(PUNCT, "<"):
            text += self._skip_generics()
        while self._at(PUNCT, "[") and self._peek() is not None and self._peek().text == "]":
            self._advance()
            self._advance()
            text += "[]"
        return text

    # -- statement scanning (method bodies, initializers, field tails)

    def _scan_block(self, owner: TypeDecl, collect_into: MethodDecl | None) -> int:
        """Consume a balanced '{...}' block; returns the closing brace line."""
        self._advance()  # '{'
        return self._scan_statements(owner, collect_into, stop_on_brace=True)

    def _scan_statement_tail(self, owner: TypeDecl) -> None:
        """Consume tokens up to the ';' ending a field declaration."""
        self._scan_statements(owner, None, stop_on_brace=False)

    def _scan_statements(self, owner: TypeDecl, collect_into: MethodDecl | None,
                         stop_on_brace: bool) -> int:
        depth = 1 if stop_on_brace else 0
        paren_depth = 0
        after_new = False
        new_call_parens: list[int] = []
        anon_pending = False
        prev_text = ""
        last_line = self.toks[self.i - 1].line if self.i > 0 else 0
        while self._cur() is not None:
            t = self._cur()
            last_line = t.line
            if anon_pending and not (t.kind == PUNCT and t.text == "{"):
                anon_pending = False
            if t.kind == PUNCT:
                if t.text == "{":
                    self._advance()
                    if anon_pending:
                        anon_pending = False
                        self._parse_type_body(owner, simple_name="")
                    else:
                        depth += 1
                    after_new = False
                elif t.text == "}":
                    if not stop_on_brace and depth == 0:
                        return t.line  # malformed tail; leave the brace for the member loop
                    self._advance()
                    depth -= 1
                    if stop_on_brace and depth == 0:
                        return t.line
                elif t.text == "(":
                    self._advance()
                    paren_depth += 1
                    if after_new:
                        new_call_parens.append(paren_depth)
                        after_new = False
                elif t.text == ")":
                    self._advance()
                    if new_call_parens and new_call_parens[-1] == paren_depth:
                        new_call_parens.pop()
                        anon_pending = True
                    paren_depth -= 1
                elif t.text == ";" and not stop_on_brace and depth == 0 and paren_depth == 0:
                    self._advance()
                    return t.line
                else:
                    if after_new and t.text not in ".<>,[]":
                        after_new = False
                    self._advance()
                prev_text = t.text
                continue
            if t.kind == KW:
                if t.text == "new":
                    after_new = True
                elif t.text in ("class", "interface", "enum") and prev_text != ".":
                    self._parse_type_decl(top_level=False, owner=owner)
                    prev_text = ""
                    continue
                elif after_new and t.text not in PRIMITIVE_TYPES:
                    after_new = False
                self._advance()
                prev_text = t.text
                continue
            if t.kind == IDENT:
                self._advance()
                if prev_text != "@":
                    if collect_into is not None:
                        collect_into.body_identifiers.append(t.text)
                    nxt = self._cur()
                    if (not after_new and collect_into is not None
                            and nxt is not None and nxt.kind == PUNCT and nxt.text == "("):
                        collect_into.callees.add(t.text)
                prev_text = t.text
                continue
            # literals
            self._advance()
            after_new = False
            prev_text = t.text
        return last_line


# ---------------------------------------------------------------------------
# public API


def parse_source(text: str, path: str = "<memory>") -> FileModel:
    """Parse Java source text into a FileModel."""
    return _Parser(path, text).parse()


def parse_file(path: str | Path) -> FileModel:
    """Parse one .java file; undecodable bytes are replaced, never fatal."""
    raw = Path(path).read_bytes()
    text = raw.decode("utf-8", errors="replace")
    return parse_source(text, str(path))


def _default_threads() -> int:
    env = os.environ.get("GTNM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring malformed GTNM_THREADS=%r", env)
    return min(8, os.cpu_count() or 1)


def index_project(root: str | Path, threads: int | None = None) -> ProjectIndex:
    """Parse every .java file under root into a ProjectIndex.

    Files parse concurrently but assemble in sorted-path order, so the index
    is deterministic. A file that cannot be read or parsed is skipped with
    one diagnostic line on stderr.
    """
    root = Path(root)
    paths = sorted(p for p in root.rglob("*.java") if p.is_file())
    idx = ProjectIndex(root=str(root))
    if not paths:
        return idx
    workers = threads if threads is not None else _default_threads()
    workers = max(1, min(workers, len(paths)))

    def safe_parse(p: Path) -> FileModel | None:
        try:
            return parse_file(p)
        except Exception as exc:  # noqa: BLE001 - any failure just skips the file
            log.warning("skipping %s: %s", p, exc)
            return None

    if workers == 1:
        parsed = [safe_parse(p) for p in paths]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parsed = list(pool.map(safe_parse, paths))
    for fm in parsed:
        if fm is None:
            continue
        idx.files.append(fm)
        for td in fm.type_decls:
            qname = f"{fm.package}.{td.name}" if fm.package else td.name
            if qname in idx.type_table:
                log.warning("duplicate type %s; keeping %s", qname, idx.type_paths[qname])
                continue
            idx.type_table[qname] = td
            idx.type_paths[qname] = fm.path
    return idx


def extract_local_context(m: MethodDecl) -> list[str]:
    """Return type, parameter types and names, then body identifiers."""
    out: list[str] = []
    if m.return_type:
        out.append(m.return_type)
    for p in m.params:
        out.append(p.type)
        out.append(p.name)
    out.extend(m.body_identifiers)
    return out


def extract_infile_context(fm: FileModel, m: MethodDecl) -> list[str]:
    """Names of every other method declared in the file, in source order."""
    return [mm.name for mm in fm.methods() if mm is not m]


def _resolve_type_name(idx: ProjectIndex, fm: FileModel, name: str) -> str | None:
    if "." in name:
        return name if name in idx.type_table else None
    for imp in fm.imports:
        if not imp.wildcard and imp.name.rsplit(".", 1)[-1] == name:
            if imp.name in idx.type_table:
                return imp.name
    same_pkg = f"{fm.package}.{name}" if fm.package else name
    if same_pkg in idx.type_table:
        return same_pkg
    for imp in fm.imports:
        if imp.wildcard:
            cand = f"{imp.name}.{name}"
            if cand in idx.type_table:
                return cand
    return None


def extract_crossfile_context(idx: ProjectIndex, fm: FileModel) -> list[str]:
    """Method names of resolvable imported types and superclasses.

    Types are emitted once each: imports first (wildcard packages expand in
    qualified-name order), then unresolved-by-import superclasses. Within a
    type, method names keep source order.
    """
    seen: set[str] = set()
    names: list[str] = []

    def emit(qname: str) -> None:
        if qname in seen:
            return
        if idx.type_paths.get(qname) == fm.path:
            return  # same file is in-file context, not cross-file
        td = idx.type_table.get(qname)
        if td is None:
            return
        seen.add(qname)
        names.extend(m.name for m in td.methods)

    for imp in fm.imports:
        if imp.wildcard:
            prefix = imp.name + "."
            in_pkg = [q for q in idx.type_table
                      if q.startswith(prefix) and "." not in q[len(prefix):]]
            for q in sorted(in_pkg):
                emit(q)
        elif imp.name in idx.type_table:
            emit(imp.name)
    for td in fm.type_decls:
        if td.super_name:
            q = _resolve_type_name(idx, fm, td.super_name)
            if q is not None:
                emit(q)
    return names


def extract_doc_context(m: MethodDecl) -> str | None:
    """First sentence of the method's Javadoc, or None when undocumented.

    Comment delimiters and leading asterisks are stripped; everything from
    the first tag line (starting with '@') is dropped; the sentence ends at
    the first period followed by whitespace or end of text.
    """
    raw = m.javadoc
    if raw is None:
        return None
    body = raw
    if body.startswith("/**"):
        body = body[3:]
    elif body.startswith("/*"):
        body = body[2:]
    if body.endswith("*/"):
        body = body[:-2]
    kept: list[str] = []
    for line in body.splitlines():
        s = line.strip()
        while s.startswith("*"):
            s = s[1:].lstrip()
        if s.startswith("@"):
            break
        kept.append(s)
    text = " ".join(" ".join(kept).split())
    if not text:
        return None
    for i, ch in enumerate(text):
        if ch == "." and (i + 1 == len(text) or text[i + 1].isspace()):
            return text[: i + 1]
    return text


def detect_invocations(m: MethodDecl, context_names: list[str]) -> list[int]:
    """Bit per context method name: 1 when the body calls that simple name."""
    return [1 if name in m.callees else 0 for name in context_names]
