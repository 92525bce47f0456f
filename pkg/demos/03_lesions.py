# %% [markdown]
# Artificial lesions
#
# Train a colors model, then re-draw either the recurrent path ("LSTMs") or
# the lexicon table and watch how the translations break.  A full run is
# 1000 epochs; pass a smaller number as the first argument for a quick look.

# %%
import sys

from lla import TrainSchedule, colors_corpus, train
from lla.lesion import LesionSpec, lesion_report

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
split = colors_corpus()
result = train(split, "lla", TrainSchedule(total_epochs=epochs, seed=0))
translator = result.translator
print(f"trained {epochs} epochs; best epoch {result.main.best_epoch}")

# %%
probes = [["wif", "kiki", "lug"], ["zup", "blicket", "lug"]]
for spec in (None, LesionSpec(frozenset({"lstms"})), LesionSpec(frozenset({"lexicon"}))):
    report = lesion_report(translator, spec, split.test, probes, max_len=30)
    print("\n".join(report.rows()))

# %% [markdown]
# Damaging the LSTMs destroys word order and usually the sequence length,
# yet whatever tokens survive still tend to be colours named in the input.
# Damaging the lexicon keeps the output's shape but lets the noisy gate
# substitute colours that the input never mentioned.
