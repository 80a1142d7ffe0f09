"""Generalized text prompts for the normal/anomaly text bank.

Ten prompts per class, deliberately generic so the resulting text vectors
are not tied to any particular object category. The anomaly list contains
one repeated phrasing; it is kept verbatim.
"""

NORMAL_PROMPTS = [
    "This is an example of a normal object",
    "This is a typical appearance of the object",
    "This is what a normal object looks like",
    "A photo of a normal object",
    "This is not an anomaly",
    "This is an example of a standard object",
    "This is the standard appearance of the object",
    "This is what a standard object looks like",
    "A photo of a standard object",
    "This object meets standard characteristics",
]

ANOMALY_PROMPTS = [
    "This is an example of an anomalous object",
    "This is not the typical appearance of the object",
    "This is what an anomaly looks like",
    "A photo of an anomalous object",
    "This is an example of an abnormal object",
    "This is an example of an abnormal object",
    "This is not the usual appearance of the object",
    "This is what an abnormal object looks like",
    "A photo of an abnormal object",
    "An abnormality detected in this object",
]
