"""Tour of the labeling-rule language: parse, inspect, format, evaluate.

Programs map a record to a class index or ABSTAIN (-1). Text programs
test the record's text; score programs compare named concept scores
against thresholds. A program is data, so you can pretty-print it back
to source and get the same AST when you re-parse.
"""

from labelsmith.data import ABSTAIN, ClassSpace, Record
from labelsmith.dsl import DslError, evaluate, format_program, parse_program

classes = ClassSpace(("spam", "ham"))

source = """
# promotional keyword sweep, first match wins
rule: contains_any(["free", "winner", "prize"]) -> spam;
rule: matches("(meeting|lunch|dinner)") and not contains("urgent") -> ham;
rule: length_at_least(200) -> ham;
default -> ABSTAIN;
"""

program = parse_program(source, classes, program_id="keyword_sweep")
print(f"parsed {program.id!r} with {len(program.rules)} rules")
print(f"stable id from content hash: {program.id if program.id else '?'}")

# the formatter emits canonical source: normalized spacing, class names
# instead of bare indices, one rule per line
print("\ncanonical form:")
print(format_program(program, classes))

texts = [
    "you are a winner claim your prize",
    "lunch at noon then the budget meeting",
    "urgent lunch meeting now",
    "short note",
]
print("evaluations:")
for text in texts:
    vote = evaluate(program, Record(id="t", text=text))
    name = classes.names[vote] if vote != ABSTAIN else "ABSTAIN"
    print(f"  {text!r:45} -> {name}")

# score programs read per-concept similarity scores instead of text
birds = ClassSpace(("landbird", "waterbird"))
score_program = parse_program(
    'rule: score("has webbed feet") >= 0.7 -> waterbird;\n'
    'rule: score("perching foot shape") >= 0.7 -> landbird;\n'
    "default -> ABSTAIN;",
    birds,
    program_id="foot_type",
)
duck = Record(id="d", scores={"has webbed feet": 0.91, "perching foot shape": 0.12})
wren = Record(id="w", scores={"has webbed feet": 0.08, "perching foot shape": 0.88})
print("\nscore program:")
for rec in (duck, wren):
    print(f"  {rec.id}: {birds.names[evaluate(score_program, rec)]}")

# parse errors carry line and column, unknown classes list what exists
try:
    parse_program('rule: contains("x") -> virus;', classes)
except DslError as exc:
    print(f"\nrejected bad program: {exc}")
