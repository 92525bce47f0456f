# %% [markdown]
# Tokenization modes
#
# Each domain has its own input and output tokenizer.  The interesting ones
# are the GEO logical forms, the WSJ bracket rewriting and character-level
# Mandarin.

# %%
from lla.data import tokenize, wsj_paren_transform

print(tokenize("what is the capital of utah?", "geo_in"))
print(tokenize("answer(A,(capital(A),loc(A,B),const(B,stateid(utah))))", "geo_out"))

# %% Brackets become "(label" and "word)" tokens; empty elements are dropped
tree = "( (S (NP-SBJ (PRP He)) (VP (VBZ needs) (NP (PRP it)) (-NONE- *T*))) )"
print(wsj_paren_transform(tree))

# %%
print(tokenize("I ate some fish.", "zh_en_in"))
print(tokenize("我吃了一些魚。", "zh_out"))
