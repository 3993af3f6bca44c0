# Future SPPB Predictor
# Next-wave physical performance prediction with exact Shapley explanations
